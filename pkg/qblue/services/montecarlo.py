"""
Reproducible Monte Carlo harness for the DC and coherent-sine estimators.

Seeding: record r of grid point g draws from a Philox stream keyed by
SeedSequence(master_seed, spawn_key=(g, r)). Records never share state, work is
split into fixed chunks and results are gathered in chunk order, so the output
is identical for any worker count.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional, Sequence, Union

import numpy as np

from qblue.config import get_settings
from qblue.errors import QBlueError
from qblue.models import (
    CrlbRow,
    DcModelKnownSigma,
    DcModelUnknownSigma,
    EstimatorName,
    InlProfile,
    QuantizerSpec,
    SineDesign,
    SweepConfig,
    SweepModel,
    SweepResult,
    SweepRow,
)
from qblue.services.counting import histogram
from qblue.services.estimators import (
    arithmetic_mean,
    crlb_dc,
    estimate_dc_known_sigma,
    estimate_dc_unknown_sigma,
    estimate_sine,
    fold_coherent,
    lse_sinefit,
)
from qblue.services.quantizer import apply_inl, make_comparator, make_uniform, quantize
from qblue.utils.gaussian import std_normal_inv_cdf

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.SeedSequence]

DC_ESTIMATORS = (EstimatorName.QUANTILE, EstimatorName.MEAN)
SINE_ESTIMATORS = (EstimatorName.QUANTILE, EstimatorName.LSE)
RECORD_CHUNK = 250


# --- random streams ----------------------------------------------------------


def record_seed(master_seed: int, grid_index: int, record_index: int) -> np.random.SeedSequence:
    """Seed of record r at grid point g; independent of scheduling."""
    return np.random.SeedSequence(master_seed, spawn_key=(grid_index, record_index))


def _generator(seed: SeedLike) -> np.random.Generator:
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def standard_normal(rng: np.random.Generator, size: int) -> np.ndarray:
    """Gaussian draws by inverse-CDF transform of uniforms on the open interval (0, 1)."""
    u = (rng.integers(0, 2**53, size=size, dtype=np.int64) + 0.5) * 2.0**-53
    return np.atleast_1d(std_normal_inv_cdf(u))


# --- record simulation --------------------------------------------------------


def simulate_dc_record(
    theta: float, sigma: float, spec: QuantizerSpec, n: int, seed: SeedLike
) -> np.ndarray:
    """Codes of theta + sigma * noise over n samples."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    noise = standard_normal(_generator(seed), n)
    return quantize(theta + sigma * noise, spec)


def simulate_sine_record(
    design: SineDesign, theta: Sequence[float], spec: QuantizerSpec, seed: SeedLike
) -> np.ndarray:
    """Sample m is s[m mod M] + sigma * eta[m], quantized."""
    signal = np.tile(design.reconstruct(theta), design.periods)
    noise = standard_normal(_generator(seed), design.record_length)
    return quantize(signal + design.sigma * noise, spec)


def simulate_comparator_record(
    theta: float, sigma: float, n: int, seed: SeedLike, threshold: float = 0.0
) -> np.ndarray:
    """Single-bit record: 1 where theta + sigma * eta >= threshold."""
    return simulate_dc_record(theta, sigma, make_comparator(threshold), n, seed)


def make_grid(lo: float, hi: float, step: float) -> tuple[float, ...]:
    """Inclusive grid lo, lo+step, ..., hi (rounded to 12 decimals)."""
    if step <= 0 or hi < lo:
        raise ValueError(f"invalid grid {lo}:{hi}:{step}")
    count = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return tuple(round(lo + i * step, 12) for i in range(count))


# --- aggregation ---------------------------------------------------------------


def summarize(
    theta_over_delta: float,
    n: int,
    estimator: EstimatorName,
    errors: np.ndarray,
    fallback: np.ndarray,
    failed: np.ndarray,
    phase: Optional[int] = None,
) -> SweepRow:
    """Mean, std (ddof=1) and MSE of normalized errors; compensated sums."""
    records = errors.size
    valid = errors[np.isfinite(errors) & ~failed]
    count = valid.size
    if count:
        mean = math.fsum(valid) / count
        mse = math.fsum(valid * valid) / count
        if count > 1:
            std = math.sqrt(math.fsum((valid - mean) ** 2) / (count - 1))
        else:
            std = 0.0
    else:
        mean = std = mse = float("nan")
    return SweepRow(
        theta_over_delta=theta_over_delta,
        n=n,
        estimator=estimator,
        mean_error=mean,
        std_error=std,
        mse=mse,
        fallback_rate=float(np.count_nonzero(fallback)) / records,
        failure_rate=float(np.count_nonzero(failed)) / records,
        phase=phase,
    )


class MonteCarloService:
    """Runs estimator sweeps and Cramer-Rao tables."""

    def __init__(self):
        self.settings = get_settings()

    def _map(self, fn: Callable, items: list, threads: int) -> list:
        if threads <= 1 or len(items) <= 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))

    @staticmethod
    def _chunks(records: int) -> list[range]:
        return [range(s, min(s + RECORD_CHUNK, records)) for s in range(0, records, RECORD_CHUNK)]

    def build_quantizer(self, config: SweepConfig) -> QuantizerSpec:
        return apply_inl(make_uniform(config.bits, config.full_scale), config.inl)

    @staticmethod
    def _selected(config: SweepConfig, allowed: tuple[EstimatorName, ...]) -> list[EstimatorName]:
        chosen = [e for e in config.estimators if e in allowed]
        skipped = [e.value for e in config.estimators if e not in allowed]
        if skipped:
            logger.warning("Estimators %s do not apply to %s; skipped", skipped, config.model.value)
        if not chosen:
            raise ValueError(f"no applicable estimator for model {config.model.value}")
        return chosen

    def run_sweep(self, config: SweepConfig, threads: Optional[int] = None) -> SweepResult:
        """Bias, spread and MSE per grid point and estimator. Thread count never changes rows."""
        threads = threads or self.settings.threads
        spec = self.build_quantizer(config)
        if config.model == SweepModel.SINE3:
            rows = self._sine_sweep(config, spec, threads)
        else:
            rows = self._dc_sweep(config, spec, threads)
        return SweepResult(config=config, rows=rows)

    # --- DC models ---

    def _dc_records(self, config, spec, grid_index, theta, n, chunk, estimators):
        sigma = config.sigma_norm * spec.step
        model1 = DcModelKnownSigma(sigma=sigma)
        size = len(chunk)
        out = {e: np.full(size, np.nan) for e in estimators}
        sigma_hat = np.full(size, np.nan)
        fallback = np.zeros(size, dtype=bool)
        failed = np.zeros(size, dtype=bool)

        for i, r in enumerate(chunk):
            codes = simulate_dc_record(
                theta, sigma, spec, n, record_seed(config.seed, grid_index, r)
            )
            if EstimatorName.MEAN in estimators:
                out[EstimatorName.MEAN][i] = arithmetic_mean(codes, spec)
            if EstimatorName.QUANTILE in estimators:
                hist = histogram(codes, spec.level_count)
                try:
                    if config.model == SweepModel.DC1:
                        report = estimate_dc_known_sigma(hist, spec, model1)
                    else:
                        report = estimate_dc_unknown_sigma(hist, spec, DcModelUnknownSigma())
                except QBlueError as e:
                    logger.debug("Record %d at theta=%g failed: %s", r, theta, e)
                    failed[i] = True
                    continue
                out[EstimatorName.QUANTILE][i] = report.theta_hat[0]
                fallback[i] = report.fallback
                if report.theta_hat.size > 1:
                    sigma_hat[i] = report.theta_hat[1]
        return out, sigma_hat, fallback, failed

    def _dc_sweep(self, config: SweepConfig, spec: QuantizerSpec, threads: int) -> list[SweepRow]:
        estimators = self._selected(config, DC_ESTIMATORS)
        delta = spec.step
        sigma = config.sigma_norm * delta
        points = [
            (g, t, n)
            for g, t in enumerate(config.theta_grid)
            for n in config.record_lengths
        ]
        chunks = self._chunks(config.records)
        work = [(point, chunk) for point in points for chunk in chunks]

        def run(item):
            (g, t, n), chunk = item
            return self._dc_records(config, spec, g, t * delta, n, chunk, estimators)

        results = self._map(run, work, threads)

        rows: list[SweepRow] = []
        per_point = len(chunks)
        for p, (g, t, n) in enumerate(points):
            parts = results[p * per_point : (p + 1) * per_point]
            fallback = np.concatenate([part[2] for part in parts])
            failed = np.concatenate([part[3] for part in parts])
            no_flags = np.zeros_like(fallback)
            for estimator in estimators:
                values = np.concatenate([part[0][estimator] for part in parts])
                errors = (values - t * delta) / delta
                if estimator == EstimatorName.QUANTILE:
                    rows.append(summarize(t, n, estimator, errors, fallback, failed))
                else:
                    rows.append(summarize(t, n, estimator, errors, no_flags, no_flags))
            if config.model == SweepModel.DC2 and EstimatorName.QUANTILE in estimators:
                sigma_hat = np.concatenate([part[1] for part in parts])
                errors = np.where(fallback, np.nan, (sigma_hat - sigma) / delta)
                rows.append(
                    summarize(t, n, EstimatorName.QUANTILE_SIGMA, errors, fallback, failed)
                )
            if failed.any():
                logger.warning(
                    "theta/delta=%g N=%d: %d of %d quantile estimates failed",
                    t, n, int(failed.sum()), failed.size,
                )
            logger.info("Finished theta/delta=%g N=%d", t, n)
        return rows

    # --- coherent sine ---

    def _sine_records(self, config, spec, design, theta, chunk, estimators):
        signal = design.reconstruct(theta)
        m = design.samples_per_period
        out = {e: np.full((len(chunk), m), np.nan) for e in estimators}
        fallback = np.zeros(len(chunk), dtype=bool)
        failed = np.zeros(len(chunk), dtype=bool)

        for i, r in enumerate(chunk):
            codes = simulate_sine_record(design, theta, spec, record_seed(config.seed, 0, r))
            if EstimatorName.LSE in estimators:
                out[EstimatorName.LSE][i] = design.reconstruct(lse_sinefit(codes, spec, design)) - signal
            if EstimatorName.QUANTILE in estimators:
                folded = fold_coherent(codes, m, design.periods, spec.level_count)
                try:
                    report = estimate_sine(folded, design, spec)
                except QBlueError as e:
                    logger.debug("Sine record %d failed: %s", r, e)
                    failed[i] = True
                    continue
                out[EstimatorName.QUANTILE][i] = design.reconstruct(report.theta_hat) - signal
                fallback[i] = report.fallback
        return out, fallback, failed

    def _sine_sweep(self, config: SweepConfig, spec: QuantizerSpec, threads: int) -> list[SweepRow]:
        estimators = self._selected(config, SINE_ESTIMATORS)
        delta = spec.step
        design = SineDesign.canonical(
            config.samples_per_period, config.periods, config.sigma_norm * delta
        )
        theta = np.asarray(config.theta_grid, dtype=np.float64) * delta
        chunks = self._chunks(config.records)

        def run(chunk):
            return self._sine_records(config, spec, design, theta, chunk, estimators)

        parts = self._map(run, chunks, threads)
        fallback = np.concatenate([part[1] for part in parts])
        failed = np.concatenate([part[2] for part in parts])
        no_flags = np.zeros_like(fallback)
        signal = design.reconstruct(theta) / delta

        rows: list[SweepRow] = []
        for estimator in estimators:
            residuals = np.vstack([part[0][estimator] for part in parts]) / delta
            flags = (fallback, failed) if estimator == EstimatorName.QUANTILE else (no_flags, no_flags)
            for n in range(design.samples_per_period):
                rows.append(
                    summarize(
                        float(signal[n]),
                        design.record_length,
                        estimator,
                        residuals[:, n],
                        *flags,
                        phase=n,
                    )
                )
        if failed.any():
            logger.warning("%d of %d sine records failed", int(failed.sum()), failed.size)
        return rows

    # --- Cramer-Rao ---

    def crlb_sweep(
        self,
        bits: int,
        sigma_norm: float,
        n: int,
        theta_grid: Sequence[float],
        full_scale: tuple[float, float] = (-1.0, 1.0),
        inl: InlProfile = InlProfile(),
    ) -> list[CrlbRow]:
        """CRLB of theta1 normalized to step^2 over a theta/step grid."""
        spec = apply_inl(make_uniform(bits, full_scale), inl)
        delta = spec.step
        return [
            CrlbRow(
                theta_over_delta=t,
                crlb_normalized=crlb_dc(t * delta, sigma_norm * delta, spec, n) / delta**2,
            )
            for t in theta_grid
        ]


montecarlo_service = MonteCarloService()
