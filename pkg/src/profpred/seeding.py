"""Deterministic RNG derivation.

All randomness in the package flows through generators derived here from
(seed, purpose, counters) tuples, so no mutable RNG state ever needs to be
checkpointed: restarting at step t re-derives the exact stream used at
step t.
"""
from __future__ import annotations

import hashlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFFFFFFFFFF
    if isinstance(key, str):
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "little")
    raise TypeError(f"rng key must be int or str, got {type(key).__name__}")


def derive_rng(*keys) -> np.random.Generator:
    """Build a Generator from a tuple of int/str keys.

    numpy's SeedSequence guarantees the resulting stream is a stable,
    platform-independent function of the entropy tuple.
    """
    if not keys:
        raise ValueError("derive_rng needs at least one key")
    entropy = [_key_to_int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def stable_id_hash(identifier: str) -> int:
    """Platform-stable 64-bit hash of a string id (for split assignment)."""
    digest = hashlib.sha256(identifier.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
