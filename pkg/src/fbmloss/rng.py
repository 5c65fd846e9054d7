"""Counter-based, replication-addressable standard normal streams.

Each replication owns a Philox-4x64 stream keyed by the master seed, with the
replication number written into the upper half of the 256-bit counter.  Any
replication's variates can therefore be produced in O(1) setup without
touching the others, and the sequence does not depend on how the work is
split across processes.  Uniforms take the top 52 bits of each raw word,
offset by half an ulp so that they lie strictly inside (0, 1), and are mapped
to normals by the inverse CDF.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .core import DomainError

_U64 = (1 << 64) - 1
_TWO_M52 = 2.0**-52


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    stream_index: int = 0

    def __post_init__(self):
        if not 0 <= int(self.master_seed) <= _U64:
            raise DomainError(f"master_seed must fit in 64 unsigned bits, got {self.master_seed!r}")
        if not 0 <= int(self.stream_index) <= _U64:
            raise DomainError(f"stream_index must be a non-negative 64-bit integer, got {self.stream_index!r}")
        object.__setattr__(self, "master_seed", int(self.master_seed))
        object.__setattr__(self, "stream_index", int(self.stream_index))


def _bit_generator(seed: SeedSpec) -> np.random.Philox:
    counter = np.array([0, 0, seed.stream_index, 0], dtype=np.uint64)
    return np.random.Philox(key=seed.master_seed, counter=counter)


def _raw_to_normal(raw: np.ndarray) -> np.ndarray:
    u = ((raw >> np.uint64(12)).astype(np.float64) + 0.5) * _TWO_M52
    return ndtri(u)


class GaussianSource:
    """Sequential standard-normal draws for one replication.

    Not thread-safe; give each worker its own source.
    """

    def __init__(self, seed: SeedSpec | int, stream_index: int | None = None):
        if not isinstance(seed, SeedSpec):
            seed = SeedSpec(seed, stream_index or 0)
        elif stream_index is not None:
            raise TypeError("pass either a SeedSpec or (master_seed, stream_index)")
        self.seed = seed
        self.position = 0
        self._bitgen = _bit_generator(seed)

    def normals(self, k: int) -> np.ndarray:
        if k < 0:
            raise DomainError("cannot draw a negative number of variates")
        out = _raw_to_normal(self._bitgen.random_raw(k))
        self.position += k
        return out

    def __repr__(self):
        return f"GaussianSource({self.seed!r}, position={self.position})"


def normal_block(master_seed: int, streams, k: int) -> np.ndarray:
    """First ``k`` variates of each listed stream, one row per stream.

    Row ``r`` is bit-identical to ``GaussianSource(SeedSpec(master_seed,
    streams[r])).normals(k)``.
    """
    streams = np.asarray(streams, dtype=np.uint64).ravel()
    raw = np.empty((streams.size, k), dtype=np.uint64)
    for r, s in enumerate(streams):
        raw[r] = _bit_generator(SeedSpec(master_seed, int(s))).random_raw(k)
    return _raw_to_normal(raw)
