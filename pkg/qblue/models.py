from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from qblue.errors import CoherenceError, QuantizerSpecError


def _frozen_array(value, dtype) -> np.ndarray:
    array = np.array(value, dtype=dtype)
    array.setflags(write=False)
    return array


class ArrayModel(BaseModel):
    """Immutable model holding numpy arrays; compared field by field."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    def __eq__(self, other: object) -> bool:
        if type(other) is not type(self):
            return NotImplemented
        for name in type(self).model_fields:
            mine, theirs = getattr(self, name), getattr(other, name)
            if isinstance(mine, np.ndarray):
                if not np.array_equal(mine, theirs):
                    return False
            elif mine != theirs:
                return False
        return True

    __hash__ = None


# --- quantizer -------------------------------------------------------------


class InlKind(str, Enum):
    NONE = "none"
    UNIFORM = "uniform"


class InlProfile(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: InlKind = InlKind.NONE
    half_width: float = Field(0.0, ge=0.0, description="Half width in units of the step")
    seed: int = Field(0, ge=0, lt=2**64)


class QuantizerSpec(ArrayModel):
    level_count: int
    step: float
    transitions: np.ndarray

    @field_validator("transitions", mode="before")
    @classmethod
    def _as_array(cls, value) -> np.ndarray:
        return _frozen_array(value, np.float64).reshape(-1)

    @model_validator(mode="after")
    def _check_invariants(self) -> "QuantizerSpec":
        if self.level_count < 2 or self.level_count % 2:
            raise QuantizerSpecError(
                f"level count must be an even integer >= 2, got {self.level_count}"
            )
        if not np.isfinite(self.step) or self.step <= 0:
            raise QuantizerSpecError(f"step must be a positive finite value, got {self.step}")
        if self.transitions.size != self.level_count - 1:
            raise QuantizerSpecError(
                f"expected {self.level_count - 1} transitions for L={self.level_count}, "
                f"got {self.transitions.size}"
            )
        if not np.all(np.isfinite(self.transitions)):
            raise QuantizerSpecError("transitions must be finite")
        gaps = np.diff(self.transitions)
        if np.any(gaps <= 0):
            k = int(np.argmax(gaps <= 0)) + 1
            raise QuantizerSpecError(
                f"transitions must be strictly increasing: T[{k + 1}] <= T[{k}]"
            )
        return self

    @property
    def output_levels(self) -> np.ndarray:
        k = np.arange(self.level_count)
        return -(self.level_count / 2 - 1) * self.step + k * self.step


# --- counting --------------------------------------------------------------


class CodeHistogram(ArrayModel):
    counts: np.ndarray
    total: int

    @field_validator("counts", mode="before")
    @classmethod
    def _as_counts(cls, value) -> np.ndarray:
        return _frozen_array(value, np.int64).reshape(-1)

    @model_validator(mode="after")
    def _check_total(self) -> "CodeHistogram":
        if self.total < 1:
            raise ValueError("histogram total must be >= 1")
        if np.any(self.counts < 0):
            raise ValueError("histogram counts must be nonnegative")
        if int(self.counts.sum()) != self.total:
            raise ValueError(
                f"histogram counts sum to {int(self.counts.sum())}, expected {self.total}"
            )
        return self

    @property
    def level_count(self) -> int:
        return int(self.counts.size)

    @property
    def probabilities(self) -> np.ndarray:
        return self.counts / self.total


class ActiveQuantileSet(ArrayModel):
    """Transition indices whose empirical cumulative probability lies in (0, 1)."""

    indices: np.ndarray
    values: np.ndarray
    total: int = Field(ge=1)

    @field_validator("indices", mode="before")
    @classmethod
    def _as_indices(cls, value) -> np.ndarray:
        return _frozen_array(value, np.int64).reshape(-1)

    @field_validator("values", mode="before")
    @classmethod
    def _as_values(cls, value) -> np.ndarray:
        return _frozen_array(value, np.float64).reshape(-1)

    @model_validator(mode="after")
    def _check_active(self) -> "ActiveQuantileSet":
        if self.indices.size != self.values.size:
            raise ValueError("indices and values differ in length")
        if np.any(np.diff(self.indices) <= 0) or np.any(self.indices < 1):
            raise ValueError("active indices must be strictly increasing and >= 1")
        if np.any((self.values <= 0) | (self.values >= 1)):
            raise ValueError("active cumulative probabilities must lie in (0, 1)")
        if np.any(np.diff(self.values) < 0):
            raise ValueError("active cumulative probabilities must be nondecreasing")
        return self

    @property
    def cardinality(self) -> int:
        return int(self.indices.size)

    def deduplicated(self) -> "ActiveQuantileSet":
        """Keep the lowest transition index of every repeated value."""
        _, first = np.unique(self.values, return_index=True)
        if first.size == self.values.size:
            return self
        first.sort()
        return ActiveQuantileSet(
            indices=self.indices[first], values=self.values[first], total=self.total
        )


# --- Gauss-Markov ----------------------------------------------------------


class ConditionFlag(str, Enum):
    CLEAN = "clean"
    RIDGED = "ridged"


class GaussMarkovProblem(ArrayModel):
    design: np.ndarray
    observations: np.ndarray
    covariance: np.ndarray

    @field_validator("design", mode="before")
    @classmethod
    def _as_design(cls, value) -> np.ndarray:
        array = np.asarray(value, dtype=np.float64)
        if array.ndim == 1:
            array = array.reshape(-1, 1)
        return _frozen_array(array, np.float64)

    @field_validator("covariance", mode="before")
    @classmethod
    def _as_matrix(cls, value) -> np.ndarray:
        return _frozen_array(np.atleast_2d(np.asarray(value, dtype=np.float64)), np.float64)

    @field_validator("observations", mode="before")
    @classmethod
    def _as_vector(cls, value) -> np.ndarray:
        return _frozen_array(value, np.float64).reshape(-1)

    @model_validator(mode="after")
    def _check_shapes(self) -> "GaussMarkovProblem":
        rows, cols = self.design.shape
        if rows < cols:
            raise ValueError(f"design has {rows} rows for {cols} parameters")
        if self.observations.size != rows:
            raise ValueError("observation vector length does not match design rows")
        if self.covariance.shape != (rows, rows):
            raise ValueError("covariance must be square with one row per observation")
        scale = max(float(np.max(np.abs(self.covariance))), np.finfo(float).tiny)
        if np.max(np.abs(self.covariance - self.covariance.T)) > 1e-12 * scale:
            raise ValueError("covariance must be symmetric")
        return self

    @property
    def parameter_count(self) -> int:
        return int(self.design.shape[1])


class ConditionReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    min_eig_estimate: float
    ridge_recommended: float = Field(ge=0.0)


class BlueSolution(ArrayModel):
    theta_hat: np.ndarray
    covariance: np.ndarray
    ridge_used: float = Field(ge=0.0)
    condition_flag: ConditionFlag = ConditionFlag.CLEAN


# --- estimators ------------------------------------------------------------


class DcModelKnownSigma(BaseModel):
    """Constant in Gaussian noise of known standard deviation.

    sigma = 0 is accepted: noise-free records are single-bin records and always
    take the fallback path.
    """

    model_config = ConfigDict(frozen=True)

    sigma: float = Field(ge=0.0, allow_inf_nan=False)


class DcModelUnknownSigma(BaseModel):
    model_config = ConfigDict(frozen=True)


class SineDesign(ArrayModel):
    samples_per_period: int = Field(ge=3)
    periods: int = Field(ge=1)
    x1: np.ndarray
    x2: np.ndarray
    sigma: float = Field(ge=0.0, allow_inf_nan=False)

    @field_validator("x1", "x2", mode="before")
    @classmethod
    def _as_regressor(cls, value) -> np.ndarray:
        return _frozen_array(value, np.float64).reshape(-1)

    @model_validator(mode="after")
    def _check_coherence(self) -> "SineDesign":
        m = self.samples_per_period
        if self.x1.size != m or self.x2.size != m:
            raise CoherenceError(f"x1 and x2 must hold exactly M={m} values per period")
        return self

    @classmethod
    def canonical(cls, samples_per_period: int, periods: int, sigma: float) -> "SineDesign":
        phase = 2 * np.pi * np.arange(samples_per_period) / samples_per_period
        return cls(
            samples_per_period=samples_per_period,
            periods=periods,
            x1=np.cos(phase),
            x2=np.sin(phase),
            sigma=sigma,
        )

    @property
    def record_length(self) -> int:
        return self.samples_per_period * self.periods

    @property
    def regressors(self) -> np.ndarray:
        """Per-phase design rows [1, x1[n], x2[n]]."""
        return np.column_stack([np.ones(self.samples_per_period), self.x1, self.x2])

    def reconstruct(self, theta) -> np.ndarray:
        return self.regressors @ np.asarray(theta, dtype=np.float64)


class FallbackEstimator(str, Enum):
    NONE = "none"
    ARITHMETIC_MEAN = "arithmetic_mean"
    LSE_SINEFIT = "lse_sinefit"


class EstimateReport(ArrayModel):
    parameter_names: tuple[str, ...]
    theta_hat: np.ndarray
    covariance: np.ndarray
    lambda_used: int = Field(ge=0)
    fallback: bool = False
    fallback_estimator: FallbackEstimator = FallbackEstimator.NONE
    ridge_used: float = Field(0.0, ge=0.0)

    @field_validator("theta_hat", mode="before")
    @classmethod
    def _as_theta(cls, value) -> np.ndarray:
        return _frozen_array(value, np.float64).reshape(-1)

    @field_validator("covariance", mode="before")
    @classmethod
    def _as_cov(cls, value) -> np.ndarray:
        return _frozen_array(np.atleast_2d(np.asarray(value, dtype=np.float64)), np.float64)

    @model_validator(mode="after")
    def _check_fallback(self) -> "EstimateReport":
        if len(self.parameter_names) != self.theta_hat.size:
            raise ValueError("one parameter name per estimate is required")
        if self.fallback != (self.fallback_estimator != FallbackEstimator.NONE):
            raise ValueError("fallback flag and fallback estimator disagree")
        return self

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))


# --- Monte Carlo -----------------------------------------------------------


class SweepModel(str, Enum):
    DC1 = "dc1"
    DC2 = "dc2"
    SINE3 = "sine3"


class EstimatorName(str, Enum):
    QUANTILE = "quantile"
    MEAN = "mean"
    LSE = "lse"
    QUANTILE_SIGMA = "quantile_sigma"


class SweepConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    model: SweepModel
    bits: int = Field(10, ge=1, le=24)
    full_scale: tuple[float, float] = (-1.0, 1.0)
    sigma_norm: float = Field(ge=0.0, allow_inf_nan=False)
    theta_grid: tuple[float, ...]
    record_lengths: tuple[int, ...] = (500,)
    samples_per_period: int = Field(20, ge=3)
    periods: int = Field(50, ge=1)
    records: int = Field(2000, ge=1)
    inl: InlProfile = InlProfile()
    seed: int = Field(0, ge=0, lt=2**64)
    estimators: tuple[EstimatorName, ...] = (EstimatorName.QUANTILE, EstimatorName.MEAN)

    @model_validator(mode="after")
    def _check_grid(self) -> "SweepConfig":
        if not self.theta_grid:
            raise ValueError("theta grid must not be empty")
        if self.model == SweepModel.SINE3:
            if len(self.theta_grid) != 3:
                raise ValueError("sine3 takes a theta/delta triple")
        elif not self.record_lengths or min(self.record_lengths) < 1:
            raise ValueError("record lengths must be >= 1")
        return self


class SweepRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    theta_over_delta: float
    n: int
    estimator: EstimatorName
    mean_error: float
    std_error: float
    mse: float
    fallback_rate: float = Field(ge=0.0, le=1.0)
    failure_rate: float = Field(0.0, ge=0.0, le=1.0)
    phase: Optional[int] = None


class SweepResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    config: SweepConfig
    rows: list[SweepRow]

    def select(self, estimator: EstimatorName, n: Optional[int] = None) -> list[SweepRow]:
        return [
            row
            for row in self.rows
            if row.estimator == estimator and (n is None or row.n == n)
        ]


class CrlbRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    theta_over_delta: float
    crlb_normalized: float = Field(ge=0.0)

    @property
    def sqrt_crlb_over_delta(self) -> float:
        return float(np.sqrt(self.crlb_normalized))
