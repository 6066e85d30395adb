"""Deterministic named random streams derived from a single master seed.

Every source of randomness in the library flows through ``substream`` so
that runs are reproducible from one seed and independent work units
(chains, replicates, folds) get non-overlapping streams regardless of
scheduling order.
"""

import zlib

import numpy as np


def _key_int(key):
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    return zlib.crc32(str(key).encode("utf-8"))


def substream(seed, *keys):
    """Return a ``numpy.random.Generator`` for the named substream.

    Parameters
    ----------
    seed : int
        Master seed (64-bit unsigned).
    *keys : str or int
        Stream name components, e.g. ``("chain", replicate_index)``.
        The same (seed, keys) always yields the same generator state.
    """
    spawn_key = tuple(_key_int(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=spawn_key))
