"""Deterministic RNG for synthetic fixtures: splitmix64-seeded xoshiro256++.

The generator is fixed (constants below) so that fixture scenes are
bit-identical across implementations and platforms. Derived draws are
likewise pinned:

* uniform double in [0, 1):  (next_u64() >> 11) * 2**-53
* uniform double in (0, 1]:  ((next_u64() >> 11) + 1) * 2**-53
* standard normals:          Box-Muller on (0,1] x [0,1) pairs
* bounded integer in [0, n): Lemire truncated multiply, (next_u64() * n) >> 64
"""

from __future__ import annotations

import math

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF

# splitmix64 constants (Steele, Lea, Flood 2014)
_SM64_GAMMA = 0x9E3779B97F4A7C15
_SM64_MUL1 = 0xBF58476D1CE4E5B9
_SM64_MUL2 = 0x94D049BB133111EB

_INV_2_53 = 2.0 ** -53


def splitmix64_stream(seed: int, n: int) -> list[int]:
    """First *n* outputs of splitmix64 starting from *seed*."""
    x = seed & _MASK64
    out = []
    for _ in range(n):
        x = (x + _SM64_GAMMA) & _MASK64
        z = x
        z = ((z ^ (z >> 30)) * _SM64_MUL1) & _MASK64
        z = ((z ^ (z >> 27)) * _SM64_MUL2) & _MASK64
        out.append(z ^ (z >> 31))
    return out


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


class Xoshiro256PP:
    """xoshiro256++ 1.0 (Blackman & Vigna), state seeded via splitmix64."""

    def __init__(self, seed: int):
        s = splitmix64_stream(seed, 4)
        self._s = list(s)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s0 + s3) & _MASK64, 23) + s0) & _MASK64
        t = (s1 << 17) & _MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        """Uniform double in [0, 1)."""
        return (self.next_u64() >> 11) * _INV_2_53

    def uniforms(self, n: int) -> np.ndarray:
        return np.array([self.uniform() for _ in range(n)], dtype=np.float64)

    def normals(self, n: int) -> np.ndarray:
        """*n* standard normals via Box-Muller; draws consumed in pairs."""
        out = np.empty(n, dtype=np.float64)
        i = 0
        while i < n:
            # u1 in (0, 1] so log() is finite
            u1 = ((self.next_u64() >> 11) + 1) * _INV_2_53
            u2 = (self.next_u64() >> 11) * _INV_2_53
            r = math.sqrt(-2.0 * math.log(u1))
            out[i] = r * math.cos(2.0 * math.pi * u2)
            if i + 1 < n:
                out[i + 1] = r * math.sin(2.0 * math.pi * u2)
            i += 2
        return out

    def below(self, n: int) -> int:
        """Integer in [0, n) by Lemire truncated multiply."""
        return (self.next_u64() * n) >> 64

    def sample_indices(self, n: int, k: int) -> np.ndarray:
        """*k* distinct indices from range(n), by partial Fisher-Yates."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot sample {k} from {n}")
        idx = np.arange(n, dtype=np.int64)
        for i in range(k):
            j = i + self.below(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:k].copy()
