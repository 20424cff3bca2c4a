"""Seeded random streams.

Every component draws from a Philox (counter-based) generator keyed by the
root seed and a stream name, so e.g. the environment stream can be varied
without disturbing SPSA perturbations.
"""
from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("env", "init", "spsa", "sampling", "minibatch", "eval", "data")


def make_rng(seed: int, stream: str = "") -> np.random.Generator:
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(stream.encode("utf-8"))]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def derive_seeds(seed: int, stream: str, count: int) -> list[int]:
    """Deterministic list of child seeds, e.g. for validation episodes."""
    rng = make_rng(seed, stream)
    return [int(s) for s in rng.integers(0, 2**31 - 1, size=count)]
