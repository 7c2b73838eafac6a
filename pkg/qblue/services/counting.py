"""Code histograms, cumulative probabilities and the covariance plug-in chain."""

import numpy as np

from qblue.errors import CodeRangeError
from qblue.models import ActiveQuantileSet, CodeHistogram
from qblue.utils.gaussian import inv_cdf_derivative


def histogram(codes, level_count: int) -> CodeHistogram:
    """Per-code occurrence counts of a record; codes must lie in [0, level_count)."""
    codes = np.asarray(codes, dtype=np.int64).reshape(-1)
    if codes.size == 0:
        raise ValueError("code sequence must not be empty")
    if codes.min() < 0 or codes.max() >= level_count:
        bad = codes[(codes < 0) | (codes >= level_count)][0]
        raise CodeRangeError(f"code {int(bad)} outside [0, {level_count - 1}]")
    counts = np.bincount(codes, minlength=level_count)
    return CodeHistogram(counts=counts, total=int(codes.size))


def cumulative_and_active(hist: CodeHistogram) -> ActiveQuantileSet:
    """
    Empirical cumulative probabilities cp[k] = sum_{n<k} p[n] for k = 1..L-1,
    restricted to the indices where 0 < cp[k] < 1.

    An empty result is valid and marks a single-bin record.
    """
    below = np.cumsum(hist.counts)[:-1]
    mask = (below > 0) & (below < hist.total)
    indices = np.flatnonzero(mask) + 1
    return ActiveQuantileSet(
        indices=indices, values=below[mask] / hist.total, total=hist.total
    )


def multinomial_covariance(probabilities, total: int) -> np.ndarray:
    """Plug-in covariance of the empirical probabilities: (diag(p) - p p^T) / N."""
    p = np.asarray(probabilities, dtype=np.float64).reshape(-1)
    if total < 1:
        raise ValueError("total must be >= 1")
    return (np.diag(p) - np.outer(p, p)) / total


def cumulative_covariance(covariance: np.ndarray) -> np.ndarray:
    """A Sigma A^T with A the lower-triangular matrix of ones."""
    covariance = np.asarray(covariance, dtype=np.float64)
    if covariance.ndim != 2 or covariance.shape[0] != covariance.shape[1]:
        raise ValueError("covariance must be a square matrix")
    out = np.cumsum(np.cumsum(covariance, axis=0), axis=1)
    return 0.5 * (out + out.T)


def active_cumulative_covariance(active: ActiveQuantileSet) -> np.ndarray:
    """
    Rows/columns of A Sigma A^T at the active indices, in closed form.

    For nested multinomial sums Cov(cp_i, cp_j) = cp_min (1 - cp_max) / N, which
    equals the restriction of ``cumulative_covariance(multinomial_covariance(p, N))``.
    """
    cp = active.values
    lower = np.minimum.outer(cp, cp)
    upper = np.maximum.outer(cp, cp)
    return lower * (1.0 - upper) / active.total


def restrict(covariance: np.ndarray, active: ActiveQuantileSet) -> np.ndarray:
    """Rows/columns k_1..k_Lambda of a covariance indexed by bin 0..L-1.

    Cumulative index k sums bins 0..k-1, i.e. row k-1 of A Sigma A^T.
    """
    positions = active.indices - 1
    return covariance[np.ix_(positions, positions)]


def quantile_covariance(active: ActiveQuantileSet, cumulative_cov: np.ndarray) -> np.ndarray:
    """Sigma_Y = J Sigma_CP J^T with J = diag(d Phi^-1 / dp at cp[k_i])."""
    if active.cardinality == 0:
        return np.zeros((0, 0))
    jac = np.atleast_1d(inv_cdf_derivative(active.values))
    return cumulative_cov * np.outer(jac, jac)
