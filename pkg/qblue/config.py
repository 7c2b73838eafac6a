from functools import lru_cache

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="QBLUE_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Application
    app_name: str = "qblue"
    app_version: str = "1.0.0"
    log_level: str = "WARNING"

    # Worker pool (QBLUE_THREADS); never changes results
    threads: int = 1

    # Monte Carlo defaults
    default_records: int = 2000
    full_scale_records: int = 5000
    theta_step: float = 0.05
    master_seed: int = 20240501

    # Output
    csv_significant_digits: int = 12

    # Quantizer
    inl_retry_budget: int = 100

    # Gauss-Markov ridge policy, relative to trace(Sigma) / dim
    ridge_start: float = 1e-10
    ridge_max: float = 1e-4
    ridge_growth: float = 10.0
    eigen_floor: float = 1e-12

    # Fisher information
    crlb_probability_floor: float = 1e-300

    @field_validator("threads")
    @classmethod
    def _threads_positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("QBLUE_THREADS must be an integer >= 1")
        return value

    @field_validator("theta_step")
    @classmethod
    def _step_positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("QBLUE_THETA_STEP must be positive")
        return value

    @field_validator("csv_significant_digits")
    @classmethod
    def _digits_in_range(cls, value: int) -> int:
        if not 12 <= value <= 17:
            raise ValueError("csv_significant_digits must be between 12 and 17")
        return value


# Model and estimator names accepted by the sweep harness and the CLI
DC_MODELS = ["dc1", "dc2"]
SINE_MODELS = ["sine3"]
VALID_MODELS = DC_MODELS + SINE_MODELS
VALID_ESTIMATORS = ["quantile", "mean", "lse"]

# CSV schemas
TRANSITION_COLUMNS = ["index", "transition_volts"]
SAMPLE_COLUMNS = ["index", "code"]
SWEEP_COLUMNS = [
    "theta_over_delta",
    "n",
    "estimator",
    "mean_error",
    "std_error",
    "mse",
    "fallback_rate",
]
CRLB_COLUMNS = ["theta_over_delta", "sqrt_crlb_over_delta"]
ESTIMATE_COLUMNS = ["parameter", "estimate", "std", "fallback", "lambda"]


@lru_cache
def get_settings() -> Settings:
    return Settings()
