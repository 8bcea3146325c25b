"""Named, splittable random streams.

Every stochastic step draws from a Philox generator keyed by the user seed
plus a tuple of stream names, so adding a new consumer never perturbs the
draws of an existing one.
"""
from __future__ import annotations

import zlib

import numpy as np


def _key(part: int | str) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part) & 0xFFFFFFFF


def make_rng(seed: int, *stream: int | str) -> np.random.Generator:
    """Return a Philox generator for ``seed`` and the named sub-stream."""
    entropy = [_key(seed), int(seed) >> 32 & 0xFFFFFFFF, *(_key(s) for s in stream)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, *stream: int | str) -> int:
    """Deterministic 63-bit child seed, for handing to another component."""
    return int(make_rng(seed, "derive", *stream).integers(0, 2**63 - 1))
