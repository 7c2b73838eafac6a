# Numerical kernels and table I/O
