"""Stable seed derivation.

Python's built-in ``hash`` is salted per process, so sub-seeds are derived
with blake2b over a canonical byte encoding instead.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def derive_seed(*parts) -> int:
    """64-bit seed from an ordered tuple of ints/strings."""
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        if isinstance(p, (int, np.integer)):
            h.update(b"i" + (int(p) & MASK64).to_bytes(8, "little"))
        else:
            b = str(p).encode("utf-8")
            h.update(b"s" + len(b).to_bytes(4, "little") + b)
    return int.from_bytes(h.digest(), "little")


def rng_for(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))


def fnv1a_32(data: bytes) -> int:
    h = 0x811C9DC5
    for byte in data:
        h ^= byte
        h = (h * 0x01000193) & 0xFFFFFFFF
    return h
