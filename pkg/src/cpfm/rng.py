"""Counter-based 64-bit RNG (SplitMix64) for cross-platform determinism.

Dataset generation, splits and masks must reproduce bit-identically on any
platform, so they avoid library RNGs whose streams may drift between
versions. SplitMix64 is a published finalizer: state advances by the
golden-gamma constant and each output is a mixed copy of the state. A
value keyed by (seed, counter) never depends on draw order, which also
permits order-independent per-sample streams via :func:`derive_seed`.
"""

from __future__ import annotations

import math

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """SplitMix64 finalizer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return (z ^ (z >> 31)) & MASK64


def derive_seed(*parts) -> int:
    """Fold integers and strings into one 64-bit sub-seed."""
    acc = 0x243F6A8885A308D3
    for part in parts:
        if isinstance(part, str):
            for byte in part.encode("utf-8"):
                acc = mix64(acc ^ byte)
        else:
            acc = mix64(acc ^ (int(part) & MASK64))
    return acc


class SplitMix64:
    """Sequential SplitMix64 stream with uniform/normal/index helpers."""

    def __init__(self, seed: int):
        self._state = int(seed) & MASK64
        self._spare: float | None = None

    def next_u64(self) -> int:
        self._state = (self._state + GAMMA) & MASK64
        return mix64(self._state)

    def uniform(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def normal(self) -> float:
        """Standard normal via Box-Muller (pairs cached)."""
        if self._spare is not None:
            value, self._spare = self._spare, None
            return value
        while True:
            u1 = self.uniform()
            if u1 > 0.0:
                break
        u2 = self.uniform()
        radius = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._spare = radius * math.sin(theta)
        return radius * math.cos(theta)

    def below(self, bound: int) -> int:
        """Unbiased integer in [0, bound) by rejection on the top bits."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = MASK64 - (MASK64 % bound)
        while True:
            value = self.next_u64()
            if value < limit:
                return value % bound

    def choice(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n) (partial Fisher-Yates)."""
        if k > n:
            raise ValueError("cannot sample more indices than available")
        pool = list(range(n))
        for i in range(k):
            j = i + self.below(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def shuffle(self, items: list) -> None:
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]
