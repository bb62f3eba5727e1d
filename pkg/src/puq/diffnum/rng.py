"""Seeded random streams keyed by (seed, purpose, index)."""

from __future__ import annotations

import zlib

import numpy as np

# purposes used across the package; each gets its own stream family
PURPOSES = (
    "mask",
    "dropout",
    "init",
    "shuffle",
    "phantom",
    "coil",
    "noise",
    "phase",
    "mc",
)


def _tag(purpose: str) -> int:
    # crc32 is stable across interpreter runs, unlike hash()
    return zlib.crc32(purpose.encode("utf-8"))


class RngStream:
    """Independent random stream derived from ``(seed, purpose, index)``.

    Backed by numpy's PCG64 bit generator; the stream is seeded through a
    ``SeedSequence`` built from the three keys, so equal keys give
    bit-identical draws and different keys give independent streams.
    """

    def __init__(self, seed: int, purpose: str, index: int = 0):
        if seed < 0 or index < 0:
            raise ValueError("seed and index must be non-negative")
        self.seed = int(seed)
        self.purpose = purpose
        self.index = int(index)
        ss = np.random.SeedSequence([self.seed, _tag(purpose), self.index])
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, purpose={self.purpose!r}, index={self.index})"

    def random(self, shape, dtype=np.float64) -> np.ndarray:
        return self.generator.random(shape, dtype=dtype)

    def uniform(self, low, high, shape=None) -> np.ndarray:
        return self.generator.uniform(low, high, shape)

    def normal(self, shape, dtype=np.float64) -> np.ndarray:
        return self.generator.standard_normal(shape, dtype=dtype)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice(self, a, size, replace=False) -> np.ndarray:
        return self.generator.choice(a, size=size, replace=replace)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self.generator.integers(low, high, size=size)


def derive_seed(seed: int, purpose: str, index: int = 0) -> int:
    """Deterministic 63-bit child seed, for handing to a sub-component."""
    ss = np.random.SeedSequence([int(seed), _tag(purpose), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
