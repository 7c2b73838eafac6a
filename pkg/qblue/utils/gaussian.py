"""Standard-normal kernels: CDF, inverse CDF and the derivative of the inverse.

All functions accept scalars or arrays and return the same shape. The inverse
CDF is scipy's ``ndtri`` (Cephes rational approximation), followed by one
Newton step on ``ndtr`` for interior probabilities.
"""

import math

import numpy as np
from scipy import special

from qblue.errors import ProbabilityDomainError

SQRT_2PI = math.sqrt(2.0 * math.pi)


def _check_open_unit(p: np.ndarray) -> None:
    if np.any(~((p > 0.0) & (p < 1.0))):
        bad = p[~((p > 0.0) & (p < 1.0))].ravel()[0]
        raise ProbabilityDomainError(f"probability must lie in (0, 1), got {bad!r}")


def _unwrap(result: np.ndarray, scalar: bool):
    return float(result) if scalar else result


def std_normal_pdf(x):
    x_arr = np.asarray(x, dtype=np.float64)
    return _unwrap(np.exp(-0.5 * x_arr * x_arr) / SQRT_2PI, x_arr.ndim == 0)


def std_normal_cdf(x):
    x_arr = np.asarray(x, dtype=np.float64)
    return _unwrap(special.ndtr(x_arr), x_arr.ndim == 0)


def std_normal_inv_cdf(p):
    """Phi^-1 on the open interval (0, 1)."""
    p_arr = np.asarray(p, dtype=np.float64)
    _check_open_unit(p_arr)
    z = special.ndtri(p_arr)
    # One Newton polish on the CDF where the residual is representable
    interior = (p_arr > 1e-8) & (p_arr < 1.0 - 1e-8)
    if np.any(interior):
        residual = special.ndtr(z) - p_arr
        z = np.where(interior, z - residual * SQRT_2PI * np.exp(0.5 * z * z), z)
    return _unwrap(z, p_arr.ndim == 0)


def inv_cdf_derivative(p):
    """d Phi^-1(p) / dp = sqrt(2 pi) exp(Phi^-1(p)^2 / 2)."""
    z = np.asarray(std_normal_inv_cdf(p), dtype=np.float64)
    return _unwrap(SQRT_2PI * np.exp(0.5 * z * z), z.ndim == 0)
