"""Deterministic, splittable random streams.

Every source of randomness in the package flows through :class:`Rng`, a thin
wrapper around numpy's Philox counter-based bit generator keyed by
``(seed, stream)``. Identical (seed, stream, call sequence) always yields
identical outputs on any platform, and child streams derived with
:meth:`Rng.split` are statistically independent of their parent and of each
other.

Stream ids are mixed with splitmix64 so that nested splits (seed -> sample ->
purpose) cannot collide by accident.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    """One round of the splitmix64 mixer; maps 64-bit ints to 64-bit ints."""
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


class Rng:
    """Counter-based random stream. ``seed`` selects the experiment,
    ``stream`` the substream within it."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        self._gen = np.random.Generator(np.random.Philox(key=(self.seed << 64) | self.stream))

    def split(self, index: int) -> "Rng":
        """Child stream `index`. Disjoint from the parent and from siblings."""
        child = splitmix64(self.stream ^ splitmix64((int(index) + 1) & _MASK64))
        return Rng(self.seed, child)

    def uniform(self, shape=(), dtype=np.float64) -> np.ndarray:
        return self._gen.random(shape).astype(dtype, copy=False)

    def normal(self, shape=(), std=1.0, dtype=np.float64) -> np.ndarray:
        return (self._gen.standard_normal(shape) * std).astype(dtype, copy=False)

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def choice(self, n: int, size: int, replace: bool = True) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def gumbel(self, shape, dtype=np.float64) -> np.ndarray:
        """Gumbel(0,1) samples via -log(-log(u)), u clamped to avoid infinities."""
        u = np.clip(self._gen.random(shape), 1e-10, 1.0 - 1e-10)
        return (-np.log(-np.log(u))).astype(dtype, copy=False)
