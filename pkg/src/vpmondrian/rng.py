"""Portable seedable generator shared by both kernels.

xoshiro256** seeded through splitmix64. Tree ``t`` of a forest seeded with
``seed`` draws from the generator seeded with ``substream_seed(seed, t)``;
the compiled kernel implements the same recurrences bit for bit.
"""
from __future__ import annotations

import hashlib

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_INV_2_53 = 1.0 / (1 << 53)


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; return ``(new_state, output)``."""
    state = (state + _GOLDEN) & _M64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return state, z ^ (z >> 31)


def substream_seed(seed: int, index: int) -> int:
    _, out = splitmix64((seed * _GOLDEN + index) & _M64)
    return out


def stable_hash(*parts) -> int:
    """64-bit hash of the repr of ``parts``; stable across runs and platforms."""
    digest = hashlib.blake2b(repr(parts).encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _M64


class Xoshiro256:
    __slots__ = ("s0", "s1", "s2", "s3")

    def __init__(self, seed: int):
        st = seed & _M64
        words = []
        for _ in range(4):
            st, out = splitmix64(st)
            words.append(out)
        self.s0, self.s1, self.s2, self.s3 = words

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s0, self.s1, self.s2, self.s3
        result = (_rotl((s1 * 5) & _M64, 7) * 9) & _M64
        t = (s1 << 17) & _M64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s0, self.s1, self.s2, self.s3 = s0, s1, s2, s3
        return result

    def uniform(self) -> float:
        """Uniform draw on the open interval (0, 1)."""
        return ((self.next_u64() >> 11) + 0.5) * _INV_2_53

    def state(self) -> tuple[int, int, int, int]:
        return self.s0, self.s1, self.s2, self.s3
