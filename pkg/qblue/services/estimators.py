"""
Quantile-based Gauss-Markov estimators for quantized records.

Every record is reduced to its histogram; the empirical cumulative
probabilities cp[k] at the transitions T[k] are pre-distorted with the inverse
normal CDF, which makes them linear in the unknown parameters:

    model 1 (known sigma):    T[k] - sigma * Phi^-1(cp[k]) = theta1
    model 2 (unknown sigma):  Phi^-1(cp[k]) = gamma1 * T[k] - gamma2,
                              gamma = [1/theta2, theta1/theta2]
    model 3 (coherent sine):  T[k] - sigma * Phi^-1(cp[k][n]) = [1, x1[n], x2[n]] theta

and the resulting linear model is solved with the BLUE. When the record is too
degenerate for the quantile design, the estimators fall back to the arithmetic
mean (models 1-2) or the least-squares sine fit (model 3) and flag it.
"""

import logging
from typing import Sequence

import numpy as np
from scipy import linalg, special

from qblue.config import get_settings
from qblue.errors import (
    CoherenceError,
    DegenerateRecordError,
    FisherInformationError,
    NonPhysicalSigmaError,
    RankDeficientError,
)
from qblue.models import (
    ActiveQuantileSet,
    BlueSolution,
    CodeHistogram,
    DcModelKnownSigma,
    DcModelUnknownSigma,
    EstimateReport,
    FallbackEstimator,
    GaussMarkovProblem,
    QuantizerSpec,
    SineDesign,
)
from qblue.services.blue import ordinary_least_squares, solve_gauss_markov
from qblue.services.counting import (
    active_cumulative_covariance,
    cumulative_and_active,
    histogram,
    quantile_covariance,
)
from qblue.utils.gaussian import std_normal_inv_cdf, std_normal_pdf

logger = logging.getLogger(__name__)

DC1_PARAMETERS = ("theta1",)
DC2_PARAMETERS = ("theta1", "theta2")
SINE_PARAMETERS = ("theta0", "theta1", "theta2")


# --- baselines -------------------------------------------------------------


def arithmetic_mean(codes, spec: QuantizerSpec) -> float:
    """Mean of the output levels of a raw record."""
    codes = np.asarray(codes, dtype=np.int64)
    if codes.size == 0:
        raise ValueError("record must not be empty")
    return float(np.mean(spec.output_levels[codes]))


def histogram_mean(hist: CodeHistogram, spec: QuantizerSpec) -> tuple[float, float]:
    """Arithmetic mean of the output levels of a histogram and its variance."""
    levels = spec.output_levels
    mean = float(hist.counts @ levels) / hist.total
    if hist.total < 2:
        return mean, 0.0
    spread = float(hist.counts @ (levels - mean) ** 2) / (hist.total - 1)
    return mean, spread / hist.total


def _mean_fallback(hist: CodeHistogram, spec: QuantizerSpec, lambda_used: int) -> EstimateReport:
    mean, variance = histogram_mean(hist, spec)
    logger.info("Quantile design unidentifiable (Lambda=%d); using arithmetic mean", lambda_used)
    return EstimateReport(
        parameter_names=DC1_PARAMETERS,
        theta_hat=[mean],
        covariance=[[variance]],
        lambda_used=lambda_used,
        fallback=True,
        fallback_estimator=FallbackEstimator.ARITHMETIC_MEAN,
    )


def single_bit_estimate(p1: float, sigma: float) -> float:
    """Invert P(y=1) = 1 - Phi(-theta/sigma): theta = -sigma * Phi^-1(1 - p1)."""
    if not 0.0 < p1 < 1.0:
        raise DegenerateRecordError(f"comparator record with p1={p1} carries no information")
    return -sigma * std_normal_inv_cdf(1.0 - p1)


# --- shared quantile pieces -------------------------------------------------


def _transitions_at(active: ActiveQuantileSet, spec: QuantizerSpec) -> np.ndarray:
    return spec.transitions[active.indices - 1]


def _quantile_cov(active: ActiveQuantileSet) -> np.ndarray:
    return quantile_covariance(active, active_cumulative_covariance(active))


def _require_sigma(sigma: float) -> None:
    if sigma <= 0:
        raise ValueError("sigma must be positive when the record spans more than one code")


# --- model 1 ---------------------------------------------------------------


def fit_known_sigma(active: ActiveQuantileSet, spec: QuantizerSpec, sigma: float) -> BlueSolution:
    """BLUE of theta1 from a (deduplicated) active set, Lambda >= 1."""
    _require_sigma(sigma)
    quantiles = np.atleast_1d(std_normal_inv_cdf(active.values))
    problem = GaussMarkovProblem(
        design=np.ones(active.cardinality),
        observations=_transitions_at(active, spec) - sigma * quantiles,
        covariance=sigma**2 * _quantile_cov(active),
    )
    return solve_gauss_markov(problem)


def estimate_dc_known_sigma(
    hist: CodeHistogram, spec: QuantizerSpec, model: DcModelKnownSigma
) -> EstimateReport:
    """Model 1: theta1 with known sigma, or the arithmetic mean when no transition is active."""
    active = cumulative_and_active(hist).deduplicated()
    if active.cardinality < 1:
        return _mean_fallback(hist, spec, active.cardinality)

    solution = fit_known_sigma(active, spec, model.sigma)
    return EstimateReport(
        parameter_names=DC1_PARAMETERS,
        theta_hat=solution.theta_hat,
        covariance=solution.covariance,
        lambda_used=active.cardinality,
        ridge_used=solution.ridge_used,
    )


# --- model 2 ---------------------------------------------------------------


def fit_unknown_sigma(
    active: ActiveQuantileSet, spec: QuantizerSpec
) -> tuple[np.ndarray, np.ndarray, float]:
    """
    BLUE of gamma = [1/theta2, theta1/theta2], mapped back to (theta1, theta2).

    The covariance of (theta1, theta2) is the first-order propagation
    G Var(gamma) G^T through the inverse map.
    """
    quantiles = np.atleast_1d(std_normal_inv_cdf(active.values))
    design = np.column_stack([_transitions_at(active, spec), -np.ones(active.cardinality)])
    solution = solve_gauss_markov(
        GaussMarkovProblem(
            design=design, observations=quantiles, covariance=_quantile_cov(active)
        )
    )
    g1, g2 = solution.theta_hat
    if g1 <= 0:
        raise NonPhysicalSigmaError(f"estimated 1/sigma = {g1:.6g} is not positive")

    theta = np.array([g2 / g1, 1.0 / g1])
    jac = np.array([[-g2 / g1**2, 1.0 / g1], [-1.0 / g1**2, 0.0]])
    covariance = jac @ solution.covariance @ jac.T
    return theta, 0.5 * (covariance + covariance.T), solution.ridge_used


def estimate_dc_unknown_sigma(
    hist: CodeHistogram,
    spec: QuantizerSpec,
    model: DcModelUnknownSigma = DcModelUnknownSigma(),
) -> EstimateReport:
    """Model 2: (theta1, sigma); falls back to the arithmetic mean when Lambda < 2."""
    active = cumulative_and_active(hist).deduplicated()
    if active.cardinality < 2:
        return _mean_fallback(hist, spec, active.cardinality)

    theta, covariance, ridge = fit_unknown_sigma(active, spec)
    return EstimateReport(
        parameter_names=DC2_PARAMETERS,
        theta_hat=theta,
        covariance=covariance,
        lambda_used=active.cardinality,
        ridge_used=ridge,
    )


# --- model 3 ---------------------------------------------------------------


def fold_coherent(
    codes, samples_per_period: int, periods: int, level_count: int
) -> list[CodeHistogram]:
    """Histogram n collects samples n, n+M, ..., n+(N-1)M."""
    codes = np.asarray(codes, dtype=np.int64).reshape(-1)
    if codes.size != samples_per_period * periods:
        raise CoherenceError(
            f"record of {codes.size} samples is not {samples_per_period} x {periods}"
        )
    by_phase = codes.reshape(periods, samples_per_period)
    return [histogram(by_phase[:, n], level_count) for n in range(samples_per_period)]


def _check_folded(folded: Sequence[CodeHistogram], design: SineDesign) -> None:
    if len(folded) != design.samples_per_period:
        raise CoherenceError(
            f"{len(folded)} phase histograms for M={design.samples_per_period}"
        )
    if any(h.total != design.periods for h in folded):
        raise CoherenceError(f"every phase histogram must hold N={design.periods} samples")


def sine_rows(
    actives: Sequence[ActiveQuantileSet], design: SineDesign, spec: QuantizerSpec
) -> GaussMarkovProblem:
    """
    Stack per-phase rows [1, x1[n], x2[n]] and T[k] - sigma Phi^-1(cp[k][n])
    with a block-diagonal covariance sigma^2 diag(Sigma_Y[0], ...).

    Phases with an empty active set are dropped.
    """
    _require_sigma(design.sigma)
    regressors = design.regressors
    designs, observations, blocks = [], [], []
    for n, active in enumerate(actives):
        if active.cardinality == 0:
            continue
        quantiles = np.atleast_1d(std_normal_inv_cdf(active.values))
        designs.append(np.repeat(regressors[n : n + 1], active.cardinality, axis=0))
        observations.append(_transitions_at(active, spec) - design.sigma * quantiles)
        blocks.append(design.sigma**2 * _quantile_cov(active))
    return GaussMarkovProblem(
        design=np.vstack(designs),
        observations=np.concatenate(observations),
        covariance=linalg.block_diag(*blocks),
    )


def fit_sine(
    actives: Sequence[ActiveQuantileSet], design: SineDesign, spec: QuantizerSpec
) -> BlueSolution:
    """BLUE of (theta0, theta1, theta2) from per-phase active sets."""
    return solve_gauss_markov(sine_rows(actives, design, spec))


def lse_sinefit(codes, spec: QuantizerSpec, design: SineDesign) -> np.ndarray:
    """Three-parameter least-squares sine fit of the output levels."""
    codes = np.asarray(codes, dtype=np.int64).reshape(-1)
    if codes.size != design.record_length:
        raise CoherenceError(
            f"record of {codes.size} samples does not match "
            f"the {design.record_length}-sample design"
        )
    full_design = np.tile(design.regressors, (design.periods, 1))
    theta, _ = ordinary_least_squares(full_design, spec.output_levels[codes])
    return theta


def _lse_from_folded(
    folded: Sequence[CodeHistogram], design: SineDesign, spec: QuantizerSpec, lambda_used: int
) -> EstimateReport:
    """LSE from phase histograms; with N samples per phase this equals OLS on the raw record."""
    levels = spec.output_levels
    counts = np.vstack([h.counts for h in folded])
    phase_means = counts @ levels / design.periods
    regressors = design.regressors
    theta, _, rank, _ = np.linalg.lstsq(regressors, phase_means, rcond=None)
    if rank < 3:
        raise RankDeficientError("sine regressors are rank deficient")

    fitted = regressors @ theta
    within = float(np.sum(counts * (levels[None, :] - phase_means[:, None]) ** 2))
    between = design.periods * float(np.sum((phase_means - fitted) ** 2))
    dof = design.record_length - 3
    s2 = (within + between) / dof if dof > 0 else 0.0
    covariance = s2 * np.linalg.inv(design.periods * regressors.T @ regressors)

    logger.info("Sine quantile design unidentifiable (%d rows); using LSE sine fit", lambda_used)
    return EstimateReport(
        parameter_names=SINE_PARAMETERS,
        theta_hat=theta,
        covariance=covariance,
        lambda_used=lambda_used,
        fallback=True,
        fallback_estimator=FallbackEstimator.LSE_SINEFIT,
    )


def estimate_sine(
    folded: Sequence[CodeHistogram], design: SineDesign, spec: QuantizerSpec
) -> EstimateReport:
    """Model 3 on a folded record, with the LSE sine fit as fallback."""
    _check_folded(folded, design)
    actives = [cumulative_and_active(h).deduplicated() for h in folded]
    rows = sum(a.cardinality for a in actives)
    used_phases = [n for n, a in enumerate(actives) if a.cardinality]
    if rows < 3 or np.linalg.matrix_rank(design.regressors[used_phases]) < 3:
        return _lse_from_folded(folded, design, spec, rows)

    try:
        solution = fit_sine(actives, design, spec)
    except RankDeficientError:
        return _lse_from_folded(folded, design, spec, rows)
    return EstimateReport(
        parameter_names=SINE_PARAMETERS,
        theta_hat=solution.theta_hat,
        covariance=solution.covariance,
        lambda_used=rows,
        ridge_used=solution.ridge_used,
    )


# --- oracles ---------------------------------------------------------------


def bin_probabilities(theta: float, sigma: float, spec: QuantizerSpec) -> np.ndarray:
    """p[k] = Phi((T[k+1]-theta)/sigma) - Phi((T[k]-theta)/sigma), T[0]=-inf, T[L]=+inf."""
    if sigma <= 0:
        p = np.zeros(spec.level_count)
        p[np.searchsorted(spec.transitions, theta, side="right")] = 1.0
        return p
    z = np.concatenate([[-np.inf], (spec.transitions - theta) / sigma, [np.inf]])
    lo, hi = z[:-1], z[1:]
    # Difference of upper tails above the median keeps precision in both tails
    upper_side = lo > 0
    return np.where(
        upper_side,
        special.ndtr(-lo) - special.ndtr(-hi),
        special.ndtr(hi) - special.ndtr(lo),
    )


def cumulative_probabilities(theta: float, sigma: float, spec: QuantizerSpec) -> np.ndarray:
    """Exact cp[k] = Phi((T[k]-theta)/sigma) for k = 1..L-1."""
    return special.ndtr((spec.transitions - theta) / sigma)


def mean_output_oracle(theta: float, sigma: float, spec: QuantizerSpec) -> float:
    """
    E[y] for input theta + sigma * eta.

    Written as y[0] + step * sum_k P(code >= k), with P(code >= k) =
    Phi((theta - T[k]) / sigma), which avoids differencing CDF values.
    """
    levels = spec.output_levels
    if sigma <= 0:
        return float(levels[np.searchsorted(spec.transitions, theta, side="right")])
    exceed = special.ndtr((theta - spec.transitions) / sigma)
    return float(levels[0] + spec.step * np.sum(exceed))


def crlb_dc(theta: float, sigma: float, spec: QuantizerSpec, total: int) -> float:
    """
    Cramer-Rao bound for theta1 from N multinomial code counts.

    I(theta) = N * sum_k (dp_k/dtheta)^2 / p_k with
    dp_k/dtheta = (phi(z_k) - phi(z_{k+1})) / sigma.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    floor = get_settings().crlb_probability_floor
    p = bin_probabilities(theta, sigma, spec)
    z = np.concatenate([[-np.inf], (spec.transitions - theta) / sigma, [np.inf]])
    density = np.nan_to_num(std_normal_pdf(z), nan=0.0)
    slope = (density[:-1] - density[1:]) / sigma
    keep = p >= floor
    information = total * float(np.sum(slope[keep] ** 2 / p[keep]))
    if information <= 0:
        raise FisherInformationError(
            f"no informative transition near theta={theta} for sigma={sigma}"
        )
    return 1.0 / information
