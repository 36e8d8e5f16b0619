"""SplitMix64 pseudo-random stream.

One generator is shared by every reproducibility-sensitive corner of the
framework: array initialization in generated drivers (the C implementation
in the driver preamble mirrors this one bit for bit), execution-parameter
sampling, and the built-in random-search tuner. Python's `random` module is
deliberately avoided so that sampled sets never drift across interpreter
versions or platforms.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1

_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class SplitMix64:
    """Deterministic 64-bit generator with a tiny, portable state."""

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & MASK64
        return z ^ (z >> 31)

    def unit_float(self) -> float:
        """Uniform double in [0, 1) using the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def symmetric_float(self) -> float:
        """Uniform double in [-1, 1); the array `random(seed)` init rule."""
        return 2.0 * self.unit_float() - 1.0

    def below(self, n: int) -> int:
        """Uniform integer in [0, n) without modulo bias."""
        if n <= 0:
            raise ValueError("below() needs a positive bound")
        limit = MASK64 - (MASK64 % n)
        while True:
            z = self.next_u64()
            if z < limit:
                return z % n

    def sample_indices(self, population: int, k: int) -> list[int]:
        """k distinct indices from range(population), via partial Fisher-Yates."""
        if k > population:
            raise ValueError("sample larger than population")
        idx = list(range(population))
        for i in range(k):
            j = i + self.below(population - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:k]
