"""Process parameters, time grids, covariance formulas and path transforms.

Everything here is a pure function of its inputs.  Sample paths are stored as
read-only numpy arrays so they can be shared freely between threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ScopeError(ValueError):
    """A bound is requested for a Hurst parameter it is not established for."""


class NumericError(ArithmeticError):
    """A factorization or embedding failed for numerical reasons."""


class ConfigError(ValueError):
    """An experiment or CLI configuration is invalid."""


@dataclass(frozen=True)
class HurstParameter:
    value: float

    def __post_init__(self):
        v = float(self.value)
        if not (0.0 < v < 1.0) or math.isnan(v):
            raise DomainError(f"Hurst parameter must lie in (0, 1), got {self.value!r}")
        object.__setattr__(self, "value", v)

    @property
    def paper_scope(self) -> bool:
        """True when H >= 1/2, the range the maximum-loss bounds are stated for."""
        return self.value >= 0.5

    def require_scope(self, what: str = "this bound") -> None:
        if not self.paper_scope:
            raise ScopeError(f"{what} is only established for H >= 1/2, got H={self.value}")


def as_hurst(h) -> HurstParameter:
    return h if isinstance(h, HurstParameter) else HurstParameter(h)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of ``n + 1`` points on ``[0, horizon]``."""

    horizon: float
    n: int

    def __post_init__(self):
        if not self.horizon > 0:
            raise DomainError(f"horizon must be positive, got {self.horizon!r}")
        if int(self.n) != self.n or self.n < 1:
            raise DomainError(f"n must be a positive integer, got {self.n!r}")
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "n", int(self.n))

    @property
    def step(self) -> float:
        return self.horizon / self.n

    @property
    def points(self) -> np.ndarray:
        pts = np.arange(self.n + 1, dtype=float) * self.step
        pts[-1] = self.horizon
        pts.flags.writeable = False
        return pts

    def scaled(self, c: float) -> "TimeGrid":
        return TimeGrid(self.horizon * c, self.n)


@dataclass(frozen=True)
class ProcessParams:
    """Parameters of ``Y_t = mu * t + sigma * B^H_t`` observed up to ``horizon``."""

    h: HurstParameter
    mu: float = 0.0
    sigma: float = 1.0
    horizon: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "h", as_hurst(self.h))
        if not self.sigma > 0:
            raise DomainError(f"sigma must be positive, got {self.sigma!r}")
        if not self.horizon > 0:
            raise DomainError(f"horizon must be positive, got {self.horizon!r}")
        object.__setattr__(self, "mu", float(self.mu))
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def is_standard(self) -> bool:
        return self.mu == 0.0 and self.sigma == 1.0


@dataclass(frozen=True)
class SamplePath:
    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1 or vals.shape[0] != self.grid.n + 1:
            raise DomainError(
                f"path needs {self.grid.n + 1} values for its grid, got shape {vals.shape}"
            )
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def times(self) -> np.ndarray:
        return self.grid.points


def _check_time(name: str, value) -> None:
    if np.any(np.asarray(value) < 0):
        raise DomainError(f"{name} must be non-negative, got {value!r}")


def fbm_covariance(s, t, h) -> float | np.ndarray:
    """Covariance ``E[B_s B_t] = (t^2H + s^2H - |t - s|^2H) / 2``.

    Broadcasts over array arguments.  On the diagonal ``s == t`` the value
    ``t^2H`` is returned directly.
    """
    h = as_hurst(h)
    _check_time("s", s)
    _check_time("t", t)
    two_h = 2.0 * h.value
    s_arr = np.asarray(s, dtype=float)
    t_arr = np.asarray(t, dtype=float)
    off = 0.5 * (t_arr**two_h + s_arr**two_h - np.abs(t_arr - s_arr) ** two_h)
    out = np.where(s_arr == t_arr, t_arr**two_h, off)
    return float(out) if out.ndim == 0 else out


def increment_autocov(n, lag_h: float, h) -> float | np.ndarray:
    """Autocovariance of fractional Gaussian noise with step ``lag_h`` at lag ``n``."""
    h = as_hurst(h)
    if not lag_h > 0:
        raise DomainError(f"lag_h must be positive, got {lag_h!r}")
    k = np.abs(np.asarray(n, dtype=float))
    if np.any(np.asarray(n) < 0):
        raise DomainError("lag must be non-negative")
    two_h = 2.0 * h.value
    scale = lag_h**two_h
    out = 0.5 * scale * ((k + 1.0) ** two_h + np.abs(k - 1.0) ** two_h - 2.0 * k**two_h)
    out = np.where(k == 0, scale, out)
    return float(out) if out.ndim == 0 else out


def rescale_path(path: SamplePath, c: float, h) -> SamplePath:
    """Self-similarity map: stretch time by ``c`` and values by ``c^H``."""
    h = as_hurst(h)
    if not c > 0:
        raise DomainError(f"scale factor must be positive, got {c!r}")
    if c == 1:
        return path
    return SamplePath(path.grid.scaled(c), path.values * c**h.value)


def to_drift_diffusion(path: SamplePath, params: ProcessParams) -> SamplePath:
    if params.is_standard:
        return path
    return SamplePath(path.grid, params.mu * path.grid.points + params.sigma * path.values)


def to_price_path(
    path: SamplePath, y0: float, r: float, mu: float, sigma: float
) -> SamplePath:
    """Geometric price ``y0 * exp((r + mu) t + sigma * B_t)`` along the path."""
    if not y0 > 0:
        raise DomainError(f"y0 must be positive, got {y0!r}")
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma!r}")
    return SamplePath(
        path.grid, y0 * np.exp((r + mu) * path.grid.points + sigma * path.values)
    )
