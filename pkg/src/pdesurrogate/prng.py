"""Counter-based splitmix64 random streams.

Every stochastic choice in the pipeline (parameter init, initial conditions,
start-step sampling) draws from one of these streams, so a run is a pure
function of its seed. Streams are split by label without advancing the
parent: child seed = scramble(parent_seed XOR fnv1a64(label)). Distinct
labels give statistically independent streams and the derivation order
never matters.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = 0x9E3779B97F4A7C15
_MASK = (1 << 64) - 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _scramble(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def _fnv1a64(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK
    return h


class SplitMix64:
    """Deterministic stream of uniforms; value(i) = scramble(seed + (i+1)*golden)."""

    __slots__ = ("seed", "_counter")

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK
        self._counter = 0

    def next_u64(self) -> int:
        self._counter += 1
        return _scramble((self.seed + self._counter * _GOLDEN) & _MASK)

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        # 53 mantissa bits -> [0, 1)
        u = self.next_u64() >> 11
        return lo + (hi - lo) * (u * 2.0**-53)

    def uniforms(self, n: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        """Vectorised draw of n uniforms, identical to n uniform() calls."""
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        z = (np.uint64(self.seed) + idx * np.uint64(_GOLDEN)).astype(np.uint64)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
        u = (z >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return lo + (hi - lo) * u

    def randint(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi) by rejection-free modular draw (bias < 2^-40 for desk ranges)."""
        span = hi - lo
        if span <= 0:
            raise ValueError(f"empty range [{lo}, {hi})")
        return lo + self.next_u64() % span

    def derive(self, label: str) -> "SplitMix64":
        """Child stream for `label`; does not advance this stream."""
        return SplitMix64(_scramble(self.seed ^ _fnv1a64(label)))

    def __repr__(self) -> str:
        return f"SplitMix64(seed={self.seed:#x}, drawn={self._counter})"
