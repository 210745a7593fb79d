"""Deterministic RNG stream derivation.

Every random quantity in the package is drawn from a stream derived from a
single 64-bit master seed plus a tuple of keys (cell id, replication, chain,
...). Streams are built with :class:`numpy.random.SeedSequence` spawn keys, so
the value a replication sees never depends on execution order.
"""

from __future__ import annotations

import hashlib
from typing import Union

import numpy as np

Key = Union[int, str]
SeedLike = Union[int, np.random.Generator, np.random.SeedSequence, None]

MASK64 = (1 << 64) - 1


def key_to_int(key: Key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("seed keys must be non-negative")
        return int(key) & MASK64
    digest = hashlib.blake2b(str(key).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def derive_seed_sequence(master: int, *keys: Key) -> np.random.SeedSequence:
    return np.random.SeedSequence(
        entropy=int(master) & MASK64, spawn_key=tuple(key_to_int(k) for k in keys)
    )


def derive_rng(master: int, *keys: Key) -> np.random.Generator:
    """Generator for the stream identified by ``keys`` under ``master``."""
    return np.random.Generator(np.random.PCG64(derive_seed_sequence(master, *keys)))


def derive_int(master: int, *keys: Key) -> int:
    """A 64-bit integer seed for the stream identified by ``keys``."""
    state = derive_seed_sequence(master, *keys).generate_state(2, dtype=np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def as_generator(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    return np.random.default_rng(seed)
