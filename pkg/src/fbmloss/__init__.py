"""Exact fractional Brownian motion simulation and maximum-loss analytics."""

__version__ = "0.1.0"

from .core import (
    ConfigError,
    DomainError,
    HurstParameter,
    NumericError,
    ProcessParams,
    SamplePath,
    ScopeError,
    TimeGrid,
    fbm_covariance,
    increment_autocov,
    rescale_path,
    to_drift_diffusion,
    to_price_path,
)
from .rng import GaussianSource, SeedSpec
from .samplers import (
    SamplerMethod,
    generate_paths,
    sample_cholesky,
    sample_circulant,
    sample_hosking,
    sample_truncated_ma,
)
from .pathstats import PathStatistics, compute_stats, loss_series

__all__ = [
    "ConfigError", "DomainError", "NumericError", "ScopeError",
    "HurstParameter", "ProcessParams", "SamplePath", "TimeGrid",
    "fbm_covariance", "increment_autocov", "rescale_path", "to_drift_diffusion", "to_price_path",
    "GaussianSource", "SeedSpec",
    "SamplerMethod", "generate_paths", "sample_cholesky", "sample_circulant", "sample_hosking",
    "sample_truncated_ma",
    "PathStatistics", "compute_stats", "loss_series",
]
