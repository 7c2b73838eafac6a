"""Gauss-Markov (BLUE) solver with ridge handling for plug-in covariances."""

import logging

import numpy as np
from scipy import linalg

from qblue.config import get_settings
from qblue.errors import CovarianceFactorizationError, RankDeficientError
from qblue.models import BlueSolution, ConditionFlag, ConditionReport, GaussMarkovProblem

logger = logging.getLogger(__name__)


def _ridge_ladder(scale: float) -> list[float]:
    settings = get_settings()
    ladder = []
    level = settings.ridge_start
    while level <= settings.ridge_max * (1 + 1e-9):
        ladder.append(level * scale)
        level *= settings.ridge_growth
    return ladder


def condition_report(covariance) -> ConditionReport:
    """
    Smallest eigenvalue of Sigma and the ridge that would lift it. Diagnostic
    only: the solver always tries plain Cholesky first.

    A ridge is recommended when the smallest eigenvalue does not exceed
    ``eigen_floor`` * trace(Sigma)/dim; it is the first rung of the ridge ladder
    that lifts the smallest eigenvalue above that floor.
    """
    covariance = np.asarray(covariance, dtype=np.float64)
    dim = covariance.shape[0]
    min_eig = float(linalg.eigvalsh(covariance, subset_by_index=[0, 0])[0])
    scale = float(np.trace(covariance)) / dim
    if scale <= 0:
        return ConditionReport(min_eig_estimate=min_eig, ridge_recommended=0.0)

    floor = get_settings().eigen_floor * scale
    if min_eig > floor:
        return ConditionReport(min_eig_estimate=min_eig, ridge_recommended=0.0)

    ladder = _ridge_ladder(scale)
    for ridge in ladder:
        if min_eig + ridge > floor:
            return ConditionReport(min_eig_estimate=min_eig, ridge_recommended=ridge)
    return ConditionReport(min_eig_estimate=min_eig, ridge_recommended=ladder[-1])


def _factorize(covariance: np.ndarray):
    """Cholesky factor of Sigma, escalating the ridge only when plain Cholesky fails."""
    dim = covariance.shape[0]
    scale = float(np.trace(covariance)) / dim
    if scale <= 0 or not np.isfinite(scale):
        raise CovarianceFactorizationError(f"covariance trace is {scale * dim}; cannot factorize")

    candidates = [0.0] + _ridge_ladder(scale)
    for ridge in candidates:
        try:
            factor = linalg.cholesky(covariance + ridge * np.eye(dim), lower=True)
        except linalg.LinAlgError:
            continue
        return factor, ridge
    raise CovarianceFactorizationError(
        f"covariance not positive definite even with ridge {candidates[-1]:.3g}"
    )


def solve_gauss_markov(problem: GaussMarkovProblem) -> BlueSolution:
    """
    theta = (H^T S^-1 H)^-1 H^T S^-1 X and its covariance (H^T S^-1 H)^-1.

    S is whitened with its Cholesky factor L (S = L L^T) and the whitened
    system L^-1 H theta = L^-1 X is solved by QR; S is never inverted.
    """
    factor, ridge = _factorize(problem.covariance)
    if ridge > 0:
        logger.warning(
            "Covariance regularized with ridge %.3g (min eigenvalue %.3g)",
            ridge,
            condition_report(problem.covariance).min_eig_estimate,
        )

    design_w = linalg.solve_triangular(factor, problem.design, lower=True)
    obs_w = linalg.solve_triangular(factor, problem.observations, lower=True)

    q, r = linalg.qr(design_w, mode="economic")
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag.min() <= max(design_w.shape) * np.finfo(float).eps * diag.max():
        raise RankDeficientError(
            f"design matrix of shape {problem.design.shape} is rank deficient"
        )

    theta = linalg.solve_triangular(r, q.T @ obs_w)
    r_inv = linalg.solve_triangular(r, np.eye(r.shape[0]))
    covariance = r_inv @ r_inv.T
    return BlueSolution(
        theta_hat=theta,
        covariance=0.5 * (covariance + covariance.T),
        ridge_used=ridge,
        condition_flag=ConditionFlag.RIDGED if ridge > 0 else ConditionFlag.CLEAN,
    )


def ordinary_least_squares(design, observations) -> tuple[np.ndarray, np.ndarray]:
    """OLS solution and its covariance s^2 (H^T H)^-1 with residual variance s^2."""
    design = np.asarray(design, dtype=np.float64)
    observations = np.asarray(observations, dtype=np.float64)
    rows, cols = design.shape
    theta, _, rank, _ = np.linalg.lstsq(design, observations, rcond=None)
    if rank < cols:
        raise RankDeficientError(f"design matrix of shape {design.shape} has rank {rank}")
    residual = observations - design @ theta
    dof = rows - cols
    s2 = float(residual @ residual) / dof if dof > 0 else 0.0
    covariance = s2 * np.linalg.inv(design.T @ design)
    return theta, covariance
