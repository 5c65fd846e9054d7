"""Generators of standard fBm sample paths on uniform grids.

Three exact methods (Cholesky on the fBm covariance, the Hosking /
Durbin-Levinson recursion on fractional Gaussian noise, and circulant
embedding of the noise covariance) and one approximate method (a truncated
Riemann sum of the Mandelbrot-Van Ness moving-average integral), the latter
kept only to cross-check the exact ones.

Every sampler is a deterministic function of a block of standard normal
variates, so a single path drawn from a :class:`GaussianSource` and row ``r``
of :func:`generate_paths` coincide bit for bit.
"""

from __future__ import annotations

from enum import Enum
from functools import lru_cache
import math

import numpy as np
from scipy.linalg import lapack
from scipy.signal import fftconvolve
from scipy.special import gamma

from .core import (
    DomainError,
    HurstParameter,
    NumericError,
    SamplePath,
    TimeGrid,
    as_hurst,
    fbm_covariance,
    increment_autocov,
)
from .rng import GaussianSource, normal_block

CHOLESKY_CAP = 4096
EIGEN_TOL = 1e-10
DEFAULT_BURN_IN_FACTOR = 50.0
MIN_BURN_IN_FACTOR = 10.0


class SamplerMethod(str, Enum):
    CHOLESKY = "cholesky"
    HOSKING = "hosking"
    CIRCULANT = "circulant"
    TRUNCATED_MA = "truncated_ma"

    @classmethod
    def parse(cls, value) -> "SamplerMethod":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            names = ", ".join(m.value for m in cls)
            raise DomainError(f"unknown sampler method {value!r}; expected one of {names}") from None

    @property
    def exact(self) -> bool:
        return self is not SamplerMethod.TRUNCATED_MA


def embedding_size(n: int) -> int:
    """Smallest power of two that is at least ``2 n``."""
    return 1 << max(1, (2 * n - 1).bit_length())


def _burn_in_steps(grid: TimeGrid, burn_in: float | None) -> int:
    if burn_in is None:
        burn_in = DEFAULT_BURN_IN_FACTOR * grid.horizon
    if burn_in < MIN_BURN_IN_FACTOR * grid.horizon:
        raise DomainError(
            f"burn_in must be at least {MIN_BURN_IN_FACTOR:g} x horizon, got {burn_in!r}"
        )
    return int(math.ceil(burn_in / grid.step - 1e-9))


def variates_needed(method, grid: TimeGrid, burn_in: float | None = None) -> int:
    method = SamplerMethod.parse(method)
    if method is SamplerMethod.CIRCULANT:
        return embedding_size(grid.n)
    if method is SamplerMethod.TRUNCATED_MA:
        return _burn_in_steps(grid, burn_in) + grid.n
    return grid.n


def _anchor(increments_or_values: np.ndarray, cumulative: bool) -> np.ndarray:
    b = increments_or_values.shape[0]
    out = np.zeros((b, increments_or_values.shape[1] + 1))
    if cumulative:
        np.cumsum(increments_or_values, axis=1, out=out[:, 1:])
    else:
        out[:, 1:] = increments_or_values
    return out


# -- Cholesky ---------------------------------------------------------------

@lru_cache(maxsize=16)
def _cholesky_factor(h: float, n: int, horizon: float) -> np.ndarray:
    pts = TimeGrid(horizon, n).points[1:]
    cov = fbm_covariance(pts[:, None], pts[None, :], h)
    lower, info = lapack.dpotrf(cov, lower=1, clean=1)
    if info > 0:
        raise NumericError(
            f"Cholesky factorization failed: leading minor at pivot index {info} is not positive definite"
        )
    if info < 0:
        raise NumericError(f"dpotrf rejected argument {-info}")
    lower.flags.writeable = False
    return lower


def _cholesky_from_normals(h: HurstParameter, grid: TimeGrid, z: np.ndarray,
                           cap: int = CHOLESKY_CAP) -> np.ndarray:
    if grid.n > cap:
        raise DomainError(f"Cholesky sampler is capped at n={cap}, got n={grid.n}")
    lower = _cholesky_factor(h.value, grid.n, grid.horizon)
    # row-local reductions: a path must not depend on the batch it was drawn in
    vals = np.empty_like(z)
    for i in range(grid.n):
        vals[:, i] = (z[:, : i + 1] * lower[i, : i + 1]).sum(axis=1)
    return _anchor(vals, cumulative=False)


# -- Hosking / Durbin-Levinson ----------------------------------------------

def hosking_coefficients(h, grid: TimeGrid):
    """Yield ``(phi_k, v_k)`` for ``k = 0 .. n-1``.

    ``phi_k`` holds the order-``k`` one-step prediction coefficients (applied
    to the most recent value first) and ``v_k`` the prediction variance.
    """
    h = as_hurst(h)
    gam = increment_autocov(np.arange(grid.n + 1), grid.step, h)
    phi = np.zeros(0)
    v = gam[0]
    yield phi, v
    for k in range(1, grid.n):
        if not v > 0:
            raise NumericError(f"prediction variance {v!r} at lag {k - 1} is not positive")
        kappa = (gam[k] - phi @ gam[k - 1:0:-1]) / v
        if not abs(kappa) < 1.0:
            raise NumericError(f"partial correlation {kappa!r} at lag {k} has magnitude >= 1")
        phi = np.concatenate([phi - kappa * phi[::-1], [kappa]])
        v = v * (1.0 - kappa * kappa)
        yield phi, v


def _hosking_from_normals(h: HurstParameter, grid: TimeGrid, z: np.ndarray) -> np.ndarray:
    x = np.empty_like(z)
    for k, (phi, v) in enumerate(hosking_coefficients(h, grid)):
        mean = (x[:, k - 1::-1] * phi).sum(axis=1) if k else 0.0
        x[:, k] = mean + math.sqrt(v) * z[:, k]
    return _anchor(x, cumulative=True)


# -- circulant embedding -----------------------------------------------------

@lru_cache(maxsize=16)
def _circulant_scale(h: float, n: int, horizon: float) -> np.ndarray:
    size = embedding_size(n)
    half = size // 2
    gam = increment_autocov(np.arange(half + 1), horizon / n, h)
    row = np.concatenate([gam, gam[half - 1:0:-1]])
    eig = np.fft.rfft(row).real
    top = eig.max()
    if eig.min() < -EIGEN_TOL * top:
        k = int(np.argmin(eig))
        raise NumericError(
            f"circulant embedding not nonnegative definite: eigenvalue {eig[k]!r} at index {k}"
        )
    eig = np.clip(eig, 0.0, None)
    scale = np.sqrt(eig / size)
    scale.flags.writeable = False
    return scale


def _circulant_from_normals(h: HurstParameter, grid: TimeGrid, z: np.ndarray) -> np.ndarray:
    size = embedding_size(grid.n)
    half = size // 2
    scale = _circulant_scale(h.value, grid.n, grid.horizon)
    w = np.empty((z.shape[0], half + 1), dtype=complex)
    w[:, 0] = z[:, 0]
    w[:, half] = z[:, 1]
    w[:, 1:half].real = z[:, 2::2]
    w[:, 1:half].imag = z[:, 3::2]
    w[:, 1:half] *= math.sqrt(0.5)
    noise = np.fft.irfft(w * scale, n=size, axis=1)[:, : grid.n] * size
    return _anchor(noise, cumulative=True)


# -- truncated moving average (approximate) ----------------------------------

def mvn_unit_constant(h) -> float:
    """Kernel constant giving ``Var(B_1) = 1`` in the moving-average integral."""
    hv = as_hurst(h).value
    return math.sqrt(2.0 * hv * gamma(1.5 - hv) / (gamma(hv + 0.5) * gamma(2.0 - 2.0 * hv)))


@lru_cache(maxsize=16)
def _ma_kernel(h: float, step: float, length: int) -> np.ndarray:
    # q[m] = ((m - 1/2) * step)^(H - 1/2) for m >= 1, q[0] = 0
    m = np.arange(length + 1, dtype=float)
    q = np.zeros(length + 1)
    q[1:] = ((m[1:] - 0.5) * step) ** (h - 0.5)
    q.flags.writeable = False
    return q


def _truncated_ma_from_normals(h: HurstParameter, grid: TimeGrid, z: np.ndarray,
                               burn_in: float | None = None) -> np.ndarray:
    if h.value < 0.5:
        raise DomainError("truncated moving-average sampler supports H >= 1/2 only")
    burn = _burn_in_steps(grid, burn_in)
    total = burn + grid.n
    q = _ma_kernel(h.value, grid.step, total)
    conv = fftconvolve(z, q[None, :], mode="full", axes=1)[:, burn: burn + grid.n + 1]
    coef = mvn_unit_constant(h) * math.sqrt(grid.step)
    out = coef * (conv - conv[:, :1])
    out[:, 0] = 0.0
    return out


# -- dispatch ----------------------------------------------------------------

def _from_normals(method: SamplerMethod, h: HurstParameter, grid: TimeGrid, z: np.ndarray,
                  burn_in: float | None, cholesky_cap: int) -> np.ndarray:
    if method is SamplerMethod.CHOLESKY:
        return _cholesky_from_normals(h, grid, z, cholesky_cap)
    if method is SamplerMethod.HOSKING:
        return _hosking_from_normals(h, grid, z)
    if method is SamplerMethod.CIRCULANT:
        return _circulant_from_normals(h, grid, z)
    return _truncated_ma_from_normals(h, grid, z, burn_in)


def sample_path(method, h, grid: TimeGrid, source: GaussianSource, *,
                burn_in: float | None = None, cholesky_cap: int = CHOLESKY_CAP) -> SamplePath:
    method = SamplerMethod.parse(method)
    h = as_hurst(h)
    if method is SamplerMethod.CHOLESKY and grid.n > cholesky_cap:
        raise DomainError(f"Cholesky sampler is capped at n={cholesky_cap}, got n={grid.n}")
    z = source.normals(variates_needed(method, grid, burn_in))[None, :]
    values = _from_normals(method, h, grid, z, burn_in, cholesky_cap)[0]
    return SamplePath(grid, values)


def sample_cholesky(h, grid: TimeGrid, source: GaussianSource,
                    cap: int = CHOLESKY_CAP) -> SamplePath:
    """Exact draw by factoring the covariance matrix of ``B`` at the grid points.

    O(n^3) set-up (cached per ``(H, n, horizon)``), n variates per path.
    """
    return sample_path(SamplerMethod.CHOLESKY, h, grid, source, cholesky_cap=cap)


def sample_hosking(h, grid: TimeGrid, source: GaussianSource) -> SamplePath:
    """Exact draw of the noise by sequential conditioning, then cumulative sum."""
    return sample_path(SamplerMethod.HOSKING, h, grid, source)


def sample_circulant(h, grid: TimeGrid, source: GaussianSource) -> SamplePath:
    """Exact O(n log n) draw via circulant embedding of the noise covariance.

    Consumes ``embedding_size(n)`` variates per path.
    """
    return sample_path(SamplerMethod.CIRCULANT, h, grid, source)


def sample_truncated_ma(h, grid: TimeGrid, source: GaussianSource,
                        burn_in: float | None = None) -> SamplePath:
    """Approximate draw from the moving-average integral, truncated at ``-burn_in``.

    Midpoint rule at the grid spacing; the kernel is normalized so the
    untruncated integral has unit variance at time 1.  Only for
    cross-validating the exact samplers.
    """
    return sample_path(SamplerMethod.TRUNCATED_MA, h, grid, source, burn_in=burn_in)


def generate_paths(method, h, grid: TimeGrid, master_seed: int, streams, *,
                   burn_in: float | None = None,
                   cholesky_cap: int = CHOLESKY_CAP) -> np.ndarray:
    """Paths for a batch of replications, shape ``(len(streams), n + 1)``."""
    method = SamplerMethod.parse(method)
    h = as_hurst(h)
    z = normal_block(master_seed, streams, variates_needed(method, grid, burn_in))
    return _from_normals(method, h, grid, z, burn_in, cholesky_cap)
