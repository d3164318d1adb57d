"""Seed-reproducible random numbers.

SplitMix64 drives everything: the state is one 64-bit integer, uniforms
take the top 53 bits of each output word, and normals come from Box-Muller
on two consecutive uniforms. Array draws use a vectorised path that
produces exactly the same stream as repeated scalar calls.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class Rng:
    """SplitMix64 stream; same seed, same sequence, on any platform."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def _bulk_u64(self, n: int) -> np.ndarray:
        # state_k = state + k * GOLDEN (mod 2^64), so n outputs come from one
        # vectorised finaliser pass; uint64 arithmetic wraps like the scalar path.
        ks = np.arange(1, n + 1, dtype=np.uint64) * np.uint64(_GOLDEN)
        ks += np.uint64(self.state)
        self.state = (self.state + n * _GOLDEN) & _MASK64
        z = ks
        z ^= z >> np.uint64(30)
        z *= np.uint64(_MIX1)
        z ^= z >> np.uint64(27)
        z *= np.uint64(_MIX2)
        z ^= z >> np.uint64(31)
        return z

    def uniform(self) -> float:
        """One double in [0, 1) with a full 53-bit mantissa."""
        return (self.next_u64() >> 11) * 2.0**-53

    def normal(self) -> float:
        """One standard normal draw; always consumes two uniforms."""
        return float(self.normal_array(1)[0])

    def uniform_array(self, shape) -> np.ndarray:
        shape = _as_shape(shape)
        n = int(np.prod(shape)) if shape else 1
        u = (self._bulk_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return u.reshape(shape)

    def normal_array(self, shape) -> np.ndarray:
        shape = _as_shape(shape)
        n = int(np.prod(shape)) if shape else 1
        u = (self._bulk_u64(2 * n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        u1 = u[0::2]
        u2 = u[1::2]
        # log1p(-u1) keeps the argument in (0, 1] without branching
        z = np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)
        return z.reshape(shape)

    def integers(self, n: int, size: int) -> np.ndarray:
        """size independent draws from {0, ..., n-1}."""
        if n <= 0:
            raise ValueError("integers() needs n >= 1")
        return np.minimum((self.uniform_array(size) * n).astype(np.int64), n - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of range(n)."""
        idx = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = int(self.uniform() * (i + 1))
            j = min(j, i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx

    def spawn(self) -> "Rng":
        """Derive an independent child stream from this one."""
        return Rng(self.next_u64())


def _as_shape(shape) -> tuple:
    if isinstance(shape, (int, np.integer)):
        return (int(shape),)
    return tuple(int(s) for s in shape)
