"""Deterministic seed derivation so every worker/step owns an independent stream."""

from __future__ import annotations

import hashlib

import numpy as np


def _as_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key)
    return int.from_bytes(hashlib.blake2b(str(key).encode(), digest_size=8).digest(), "little")


def derive_seed(*keys) -> int:
    """Stable 63-bit seed from a tuple of ints/strings."""
    state = np.random.SeedSequence([_as_int(k) for k in keys]).generate_state(1, np.uint64)[0]
    return int(state) >> 1


def rng_for(*keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*keys))
