"""Deterministic RNG stream derivation.

Every random draw in the engine comes from a stream derived from the run
seed plus a structured key, so identical configs reproduce identical bytes
regardless of call order elsewhere.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_int(part: object) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"rng key ints must be non-negative, got {part}")
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed: int, *key: object) -> np.random.Generator:
    """Child generator keyed by (seed, *key); stable across processes."""
    spawn_key = tuple(_key_int(p) for p in key)
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=spawn_key))
