"""Configuration, coupled time loop, epsilon sweeps and the oracle suite."""

from .config import ConfigError, RunConfig, load_config, parse_config
from .coupled import RunFailure, RunResult, initial_data, run_coupled, run_reference
from .sweep import RateFit, fit_rate, run_sweep
from .validate import validate

__all__ = [
    "ConfigError",
    "RunConfig",
    "load_config",
    "parse_config",
    "RunFailure",
    "RunResult",
    "initial_data",
    "run_coupled",
    "run_reference",
    "RateFit",
    "fit_rate",
    "run_sweep",
    "validate",
]
