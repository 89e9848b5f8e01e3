"""
Seeded random streams.

All randomness flows from one integer seed. A stream for a sub-task is
derived by hashing the seed together with string/int keys with BLAKE2b
(8-byte digest, little-endian) and seeding numpy's PCG64 with the result,
so streams are stable across platforms and independent of call order.
"""
from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def derive_seed(seed: int, *keys) -> int:
    """64-bit seed for the stream named by ``keys`` under ``seed``."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(seed) & MASK64).encode("ascii"))
    for key in keys:
        h.update(b"\x1f")
        h.update(str(key).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


def make_rng(seed: int, *keys) -> np.random.Generator:
    """PCG64 generator for a derived stream (or the raw seed when no keys)."""
    s = derive_seed(seed, *keys) if keys else int(seed) & MASK64
    return np.random.Generator(np.random.PCG64(s))
