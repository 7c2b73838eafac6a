"""Quantile-based Gauss-Markov estimation from quantized records."""
