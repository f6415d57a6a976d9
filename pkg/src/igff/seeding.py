"""Deterministic seed derivation.

Every random stream is a ``numpy.random.SeedSequence`` built from the master
seed, a stage tag and integer indices, so results never depend on worker
count or call order.
"""
from __future__ import annotations

import zlib

import numpy as np


def stage_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def derive_seed(master: int, tag: str, *indices: int) -> np.random.SeedSequence:
    """SeedSequence for (master, tag, indices...)."""
    key = [int(master) & 0xFFFFFFFF, (int(master) >> 32) & 0xFFFFFFFF, stage_key(tag)]
    return np.random.SeedSequence(key + [int(i) for i in indices])


def rng(master: int, tag: str, *indices: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, tag, *indices))


def field_seeds(master: int, tag: str, count: int, *prefix: int) -> list[np.random.SeedSequence]:
    """One seed per field sample; the N value is deliberately not part of the key so
    studies across N share (pair) their streams."""
    return [derive_seed(master, tag, *prefix, i) for i in range(count)]
