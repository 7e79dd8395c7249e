"""Seeded xoshiro256** streams.

State expansion: four successive splitmix64 outputs seeded with ``seed``,
each XOR-ed with the matching splitmix64 output seeded with
``stream_id ^ STREAM_SALT``. Any (seed, stream_id) pair therefore maps to an
independent, reproducible stream that is easy to reimplement elsewhere.
"""
from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
STREAM_SALT = 0xD1B54A32D192ED03


def _splitmix64(state: int) -> tuple[int, int]:
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def meta_stream_id(epoch: int, episode: int) -> int:
    """Stream id of meta-training episode ``episode`` in epoch ``epoch``."""
    return (epoch << 32) + episode


class RngStream:
    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & MASK64
        self.stream_id = int(stream_id) & MASK64
        a, b = self.seed, self.stream_id ^ STREAM_SALT
        s = []
        for _ in range(4):
            a, x = _splitmix64(a)
            b, y = _splitmix64(b)
            s.append(x ^ y)
        if not any(s):
            s[0] = 1
        self._s = s

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def below(self, n: int) -> int:
        """Unbiased integer in [0, n) (Lemire's multiply-and-reject)."""
        if n <= 0:
            raise ValueError("n must be positive")
        m = self.next_u64() * n
        low = m & MASK64
        if low < n:
            threshold = ((1 << 64) - n) % n
            while low < threshold:
                m = self.next_u64() * n
                low = m & MASK64
        return m >> 64

    def sample(self, items, k: int) -> list:
        """First ``k`` positions of a Fisher-Yates shuffle of ``items``."""
        pool = list(items)
        if k > len(pool):
            raise ValueError(f"cannot draw {k} from {len(pool)}")
        for i in range(k):
            j = i + self.below(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]

    def permutation(self, items) -> list:
        return self.sample(items, len(items))

    def normal(self) -> float:
        # Box-Muller, one variate per pair of uniforms; 1 - u keeps log finite.
        u1 = 1.0 - self.random()
        u2 = self.random()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def normals(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.array([self.normal() for _ in range(n)], dtype=np.float64).reshape(shape)
