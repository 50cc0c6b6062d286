"""Shared helpers: stable seeding and half-up rounding."""

from __future__ import annotations

import hashlib
import math
import random


def stable_seed(*parts: object) -> int:
    """Collapse mixed parts into a 64-bit seed, stable across processes.

    Python's builtin hash() is salted per process, so derived seeds go
    through blake2b instead.
    """
    payload = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "big")


def derive_rng(*parts: object) -> random.Random:
    return random.Random(stable_seed(*parts))


def fisher_yates(items: list, rng: random.Random) -> None:
    """In-place seeded Fisher-Yates shuffle."""
    for i in range(len(items) - 1, 0, -1):
        j = rng.randint(0, i)
        items[i], items[j] = items[j], items[i]


def round_half_up(x: float) -> int:
    """Round a non-negative count to the nearest integer, halves up."""
    return int(math.floor(x + 0.5))
