"""Closed-form bounds and asymptotics for the maximum loss of fBm.

Notation: ``M`` is the maximum loss over ``[0, t]``, ``H`` the Hurst
parameter, ``Phi_bar`` the standard normal upper tail.  Bounds built on the
Sudakov-Fernique comparison (expected values, Markov tail, and the default
Borel ``eta``) are refused for ``H < 1/2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr

from .core import DomainError, HurstParameter, as_hurst

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def normal_tail(x):
    """``P(Z > x)`` for standard normal ``Z``; accurate in the far tail."""
    return ndtr(-np.asarray(x, dtype=float)) if np.ndim(x) else float(ndtr(-float(x)))


def log_normal_tail(x):
    return log_ndtr(-np.asarray(x, dtype=float)) if np.ndim(x) else float(log_ndtr(-float(x)))


def _positive(name: str, value: float) -> None:
    if not value > 0:
        raise DomainError(f"{name} must be positive, got {value!r}")


@dataclass(frozen=True)
class ExpectedLossBounds:
    lower: float
    upper: float
    horizon: float
    h: HurstParameter


def expected_maxloss_bounds(a: float, h) -> ExpectedLossBounds:
    """``sqrt(2) a^H / (2 sqrt(pi)) <= E[M_a] <= 2 sqrt(2) a^H / sqrt(pi)``."""
    h = as_hurst(h)
    _positive("horizon", a)
    h.require_scope("the expected maximum-loss bound")
    scale = a**h.value
    return ExpectedLossBounds(0.5 * _SQRT_2_OVER_PI * scale, 2.0 * _SQRT_2_OVER_PI * scale,
                              float(a), h)


def expected_sup_bounds(a: float, h) -> tuple[float, float]:
    h = as_hurst(h)
    _positive("horizon", a)
    h.require_scope("the expected supremum bound")
    upper = _SQRT_2_OVER_PI * a**h.value
    return 0.5 * upper, upper


def tail_markov_upper_raw(a: float, h, y: float) -> float:
    h = as_hurst(h)
    _positive("horizon", a)
    _positive("loss level", y)
    h.require_scope("the Markov tail bound")
    return 2.0 * _SQRT_2_OVER_PI * a**h.value / y


def tail_markov_upper(a: float, h, y: float) -> float:
    """``P(M_a > y) <= min(1, 2 sqrt(2) a^H / (y sqrt(pi)))``."""
    return min(1.0, tail_markov_upper_raw(a, h, y))


def tail_gaussian_lower(t: float, h, x: float) -> float:
    """``P(M_t > x) >= Phi_bar(x / t^H)``, the tail of the endpoint drop ``-B_t``."""
    h = as_hurst(h)
    _positive("horizon", t)
    _positive("loss level", x)
    return normal_tail(x / t**h.value)


def default_eta(t: float, h) -> float:
    return expected_maxloss_bounds(t, h).upper


def log_tail_borel_upper(t: float, h, x: float, eta: float | None = None) -> float:
    """Log of the unclipped Borel bound ``2 exp(-(x - eta)^2 / (2 t^2H))``."""
    h = as_hurst(h)
    _positive("horizon", t)
    if eta is None:
        eta = default_eta(t, h)
    if eta < 0:
        raise DomainError(f"eta must be non-negative, got {eta!r}")
    if not x > eta:
        raise DomainError(f"bound undefined below eta: need x > {eta!r}, got {x!r}")
    return math.log(2.0) - 0.5 * (x - eta) ** 2 / t ** (2.0 * h.value)


def tail_borel_upper(t: float, h, x: float, eta: float | None = None) -> float:
    """Borel-inequality upper bound on ``P(M_t > x)`` for ``x > eta``, clipped to 1.

    ``eta`` must dominate ``E[M_t]``; by default the expected-loss upper bound.
    """
    return min(1.0, math.exp(log_tail_borel_upper(t, h, x, eta)))


def asymptotic_slope(t: float, h, sigma: float = 1.0) -> float:
    """Limit of ``log P(M_t > x) / x^2`` as ``x -> infinity``: ``-1 / (2 sigma^2 t^2H)``."""
    h = as_hurst(h)
    _positive("horizon", t)
    _positive("sigma", sigma)
    return -1.0 / (2.0 * sigma**2 * t ** (2.0 * h.value))


@dataclass(frozen=True)
class DriftTailAnalysis:
    v_star: float | None
    minimizer: float
    bound: float
    regime: str  # "interior" or "endpoint_t"
    threshold: float | None


def drift_minimizer(t: float, h, mu: float, x: float, sigma: float = 1.0) -> DriftTailAnalysis:
    """Best single-pair lower bound for the drifted process ``mu t + sigma B_t``.

    ``P(M_t > x) >= sup_v Phi_bar(f(v))`` with ``f(v) = (x + mu v) / (sigma v^H)``.
    For ``mu > 0`` the critical point ``v* = x H / (mu (1 - H))`` is used when it
    falls inside ``[0, t)``; otherwise ``f`` is decreasing on ``(0, t]`` and the
    minimum sits at ``t``.
    """
    h = as_hurst(h)
    _positive("horizon", t)
    _positive("loss level", x)
    _positive("sigma", sigma)
    hv = h.value
    v_star = threshold = None
    if mu > 0:
        v_star = x * hv / (mu * (1.0 - hv))
        threshold = t * mu * (1.0 - hv) / hv
    if v_star is not None and x < threshold:
        regime, minimizer = "interior", v_star
    else:
        regime, minimizer = "endpoint_t", float(t)
    f = (x + mu * minimizer) / (sigma * minimizer**hv)
    return DriftTailAnalysis(v_star, minimizer, normal_tail(f), regime, threshold)


def endpoint_covariance(u, v, t: float, h):
    """``(v^2H - u^2H + (t-u)^2H - (t-v)^2H) / 2`` for ``u <= v <= t``.

    This is ``E[(-B_t)(B_u - B_v)]``: the covariance of the loss over
    ``[u, v]`` with the endpoint drop ``-B_t``.  It is maximal (``t^2H``)
    at ``(u, v) = (0, t)``.
    """
    h = as_hurst(h)
    u_arr = np.asarray(u, dtype=float)
    v_arr = np.asarray(v, dtype=float)
    if np.any(u_arr < 0) or np.any(u_arr > v_arr) or np.any(v_arr > t):
        raise DomainError("endpoint_covariance needs 0 <= u <= v <= t")
    p = 2.0 * h.value
    out = 0.5 * (v_arr**p - u_arr**p + (t - u_arr) ** p - (t - v_arr) ** p)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ThScanResult:
    h_param: float
    grid_n: int
    members: list
    max_gap: float
    k_bound: float
    unique_maximizer: bool
    contained: bool

    @property
    def passed(self) -> bool:
        return self.unique_maximizer and self.contained


def th_scan(t: float, h, h_param: float, grid_n: int, slack: float = 2.0) -> ThScanResult:
    """Enumerate the near-maximal-variance set on a lattice and test its shape.

    Members are lattice pairs ``u <= v`` with
    ``endpoint_covariance(u, v) >= t^2H - h_param^2``.  Containment asks that
    every member has ``v >= t - K h_param^2`` with ``K = slack t^(1-2H) / H``.
    """
    h = as_hurst(h)
    _positive("horizon", t)
    _positive("h_param", h_param)
    if grid_n < 16:
        raise DomainError(f"grid_n must be at least 16, got {grid_n!r}")
    sigma2 = t ** (2.0 * h.value)
    if not h_param**2 < sigma2 / 2.0:
        raise DomainError(f"need h_param^2 < t^2H / 2 = {sigma2 / 2.0!r}")
    pts = np.arange(grid_n + 1, dtype=float) * (t / grid_n)
    pts[-1] = t
    iu, iv = np.triu_indices(grid_n + 1)
    cov = endpoint_covariance(pts[iu], pts[iv], t, h)
    corner = (iu == 0) & (iv == grid_n)
    unique = bool(cov[corner][0] == sigma2 and np.all(cov[~corner] < sigma2))
    inside = cov >= sigma2 - h_param**2
    mu_, mv_ = pts[iu[inside]], pts[iv[inside]]
    k_bound = slack * t ** (1.0 - 2.0 * h.value) / h.value
    max_gap = float(np.max(t - mv_))
    contained = bool(np.all(mv_ >= t - k_bound * h_param**2))
    members = list(zip(mu_.tolist(), mv_.tolist()))
    return ThScanResult(float(h_param), int(grid_n), members, max_gap, k_bound, unique, contained)


def talagrand_reference(x: float, t: float, h) -> float:
    """Normal tail ``Phi_bar(x / t^H)`` of the maximal-variance increment."""
    h = as_hurst(h)
    _positive("horizon", t)
    _positive("loss level", x)
    return normal_tail(x / t**h.value)
