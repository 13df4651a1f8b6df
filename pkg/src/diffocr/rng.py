"""Counter-based random streams.

Philox generators keyed by (seed, *derivation path) so that workers, epochs
and samples each get an independent, reproducible stream without shared
state: the same seed and call sequence always yields the same draws.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _derive_key(parts: tuple) -> int:
    h = hashlib.sha256()
    for p in parts:
        h.update(repr(p).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:16], "little")


class RngStream:
    """A reproducible random stream derived from a 64-bit seed.

    `child(*parts)` forks a statistically independent stream keyed by the
    seed plus the derivation path (e.g. ("epoch", 3, "noise")).
    """

    def __init__(self, seed: int, _path: tuple = ()):
        self.seed = int(seed)
        self._path = _path
        self._gen = np.random.Generator(np.random.Philox(key=_derive_key((self.seed,) + _path)))

    def child(self, *parts) -> "RngStream":
        return RngStream(self.seed, self._path + tuple(parts))

    def uniforms(self, shape) -> np.ndarray:
        return self._gen.random(shape)

    def integers(self, low: int, high: int, size=None):
        """Draws from [low, high] inclusive."""
        return self._gen.integers(low, high, size=size, endpoint=True)

    def normal(self, shape, scale: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=shape)

    def uniform(self, low: float, high: float, size=None):
        return self._gen.uniform(low, high, size=size)

    def shuffled(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
