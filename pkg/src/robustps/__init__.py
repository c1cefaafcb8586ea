"""Noise-robust propensity scores for label-corrupted tabular data."""

from .errors import ConfigError, DataError, NumericError, RobustPSError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "NumericError", "RobustPSError", "__version__"]
