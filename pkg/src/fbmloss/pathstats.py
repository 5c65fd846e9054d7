"""Supremum, infimum, range and maximum loss (maximum drawdown) of sample paths."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DomainError, SamplePath, TimeGrid


@dataclass(frozen=True)
class PathStatistics:
    sup: float
    inf: float
    range: float
    max_loss: float
    peak_time: float
    trough_time: float
    peak_index: int
    trough_index: int


@dataclass(frozen=True)
class LossSeries:
    """Running drawdown ``x[i] = max(values[:i+1]) - values[i]``."""

    grid: TimeGrid
    x: np.ndarray


def _as_path(path) -> SamplePath:
    """Accept a SamplePath or a bare sequence (indexed by step number)."""
    if isinstance(path, SamplePath):
        return path
    vals = np.asarray(path, dtype=float)
    if vals.ndim != 1 or vals.size < 2:
        raise DomainError("path needs at least two values (the origin and one step)")
    return SamplePath(TimeGrid(float(vals.size - 1), vals.size - 1), vals)


def compute_stats(path) -> PathStatistics:
    """Path extrema and the largest peak-to-later-trough decline.

    The maximum loss is found in one pass from the running maximum.  Among
    pairs achieving it the lexicographically earliest ``(peak, trough)`` is
    reported.
    """
    path = _as_path(path)
    vals = path.values
    running = np.maximum.accumulate(vals)
    loss = running - vals
    trough = int(np.argmax(loss))
    # first index where the running maximum reached its value at the trough
    peak = int(np.argmax(vals[: trough + 1] == running[trough]))
    times = path.grid.points
    sup = float(running[-1])
    inf = float(vals.min())
    return PathStatistics(
        sup=sup,
        inf=inf,
        range=sup - inf,
        max_loss=float(loss[trough]),
        peak_time=float(times[peak]),
        trough_time=float(times[trough]),
        peak_index=peak,
        trough_index=trough,
    )


def loss_series(path) -> LossSeries:
    path = _as_path(path)
    x = np.maximum.accumulate(path.values) - path.values
    x.flags.writeable = False
    return LossSeries(path.grid, x)


def max_loss_bruteforce(values) -> float:
    """Exhaustive maximum of ``values[i] - values[j]`` over ``i <= j``; O(n^2)."""
    v = np.asarray(values.values if isinstance(values, SamplePath) else values, dtype=float)
    diff = v[:, None] - v[None, :]
    return float(np.triu(diff).max())


@dataclass(frozen=True)
class BatchStatistics:
    """Per-path statistics for a batch of paths, as parallel arrays."""

    sup: np.ndarray
    inf: np.ndarray
    max_loss: np.ndarray
    terminal: np.ndarray

    @property
    def range(self) -> np.ndarray:
        return self.sup - self.inf

    def __len__(self):
        return self.max_loss.size

    def scaled(self, c: float) -> "BatchStatistics":
        return BatchStatistics(self.sup * c, self.inf * c, self.max_loss * c, self.terminal * c)

    @classmethod
    def concat(cls, parts) -> "BatchStatistics":
        parts = list(parts)
        return cls(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("sup", "inf", "max_loss", "terminal")))


def batch_stats(paths: np.ndarray) -> BatchStatistics:
    """Row-wise statistics of a ``(batch, n + 1)`` array of paths."""
    paths = np.asarray(paths, dtype=float)
    if paths.ndim != 2 or paths.shape[1] == 0:
        raise DomainError("expected a nonempty (batch, n + 1) array")
    running = np.maximum.accumulate(paths, axis=1)
    return BatchStatistics(
        sup=running[:, -1].copy(),
        inf=paths.min(axis=1),
        max_loss=(running - paths).max(axis=1),
        terminal=paths[:, -1].copy(),
    )
