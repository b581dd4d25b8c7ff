"""Deterministic seeding utilities.

Weight initialization and per-client/per-round stream derivation are built on
splitmix64 so that a single 64-bit seed reproduces every run bit-for-bit,
independent of platform. Bulk sampling (shuffles, reservoir draws, Dirichlet)
uses numpy Generators seeded through :func:`derive_seed`.
"""
from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _mix64(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def splitmix64_block(seed: int, n: int) -> np.ndarray:
    """Return n consecutive splitmix64 outputs for `seed` as uint64."""
    idx = np.arange(1, n + 1, dtype=np.uint64)
    z = np.uint64(seed & _MASK64) + idx * np.uint64(_GOLDEN)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def uniform_block(seed: int, n: int) -> np.ndarray:
    """n float64 samples in [0, 1), deterministic per seed."""
    # top 53 bits give a dyadic rational in [0, 1)
    return (splitmix64_block(seed, n) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def derive_seed(seed: int, *parts: int) -> int:
    """Fold integer tags (round index, client id, ...) into a child seed."""
    h = _mix64(seed)
    for p in parts:
        h = _mix64(h ^ ((p * _GOLDEN) & _MASK64))
    return h


def generator(seed: int, *parts: int) -> np.random.Generator:
    """numpy Generator on an independent stream derived from (seed, parts)."""
    return np.random.default_rng(derive_seed(seed, *parts))
