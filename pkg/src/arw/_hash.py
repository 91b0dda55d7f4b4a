"""Deterministic 64-bit mixing used for every seed in the package.

All randomness is derived from a master seed by hashing, never by drawing
from a shared stream, so results do not depend on evaluation order or on
how trials are distributed across threads.
"""

import math

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """splitmix64 finalizer on a Python int (taken modulo 2**64)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *keys: int) -> int:
    """Child seed of ``master`` for the integer path ``keys``.

    ``derive_seed(s, i)`` is the seed of trial ``i`` under master seed ``s``;
    longer paths name nested streams (e.g. ``(trial, stream_id)``).
    """
    h = mix64(master ^ GOLDEN)
    for k in keys:
        h = mix64((h + GOLDEN) ^ mix64(k & MASK64))
    return h


def seed_key(seed: int) -> int:
    """Pre-mixed key consumed by the instruction hash in the kernels."""
    return mix64(seed + GOLDEN)


C_SITE = 0xD1B54A32D192ED03
TWO53 = 1 << 53


def hash53(key: int, site: int, index: int) -> int:
    """Top 53 bits of the instruction hash; the compiled kernels compute the
    same value with wrapping uint64 arithmetic."""
    return mix64((key + site * C_SITE + index * GOLDEN) & MASK64) >> 11


def threshold53(prob: float) -> int:
    """Integer cut ``T`` with ``v < T`` iff ``v * 2**-53 < prob`` for 53-bit ``v``."""
    return min(TWO53, max(0, math.ceil(prob * TWO53)))
