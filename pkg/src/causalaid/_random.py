"""Seed derivation.

Every random stream in the package is a numpy ``Generator`` backed by
PCG64, seeded with ``derive_seed(study_seed, *labels)``: the first eight
bytes (little-endian) of BLAKE2b over ``"<seed>|<label>|<label>..."``.
PCG64 output for a given 64-bit seed is stable across platforms.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(seed: int, *labels) -> int:
    key = "|".join([str(int(seed)), *map(str, labels)]).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def make_rng(seed: int, *labels) -> np.random.Generator:
    if labels:
        seed = derive_seed(seed, *labels)
    return np.random.Generator(np.random.PCG64(int(seed)))
