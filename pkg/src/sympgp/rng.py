"""Deterministic random-stream derivation.

Every stochastic choice in the library draws from a generator derived from a
single master seed plus a path of string/integer tags.  Identical
(seed, path) pairs give identical streams on every platform, which is what
makes dataset generation, fitting, and evaluation reproducible regardless of
execution order or process count.
"""

import zlib

import numpy as np

__all__ = ["child_rng", "child_seed_sequence"]


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    return zlib.crc32(str(tag).encode("utf-8"))


def child_seed_sequence(master_seed: int, *path) -> np.random.SeedSequence:
    """SeedSequence for the stream identified by ``path`` under ``master_seed``."""
    entropy = (int(master_seed),) + tuple(_tag_to_int(t) for t in path)
    return np.random.SeedSequence(entropy)


def child_rng(master_seed: int, *path) -> np.random.Generator:
    """Generator for the stream identified by ``path`` under ``master_seed``."""
    return np.random.default_rng(child_seed_sequence(master_seed, *path))
