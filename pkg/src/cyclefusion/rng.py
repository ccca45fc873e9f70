"""Named random streams derived from a single master seed.

Every consumer (weight init, dropout, hyperparameter sampling, data split,
noise channels) draws from its own ``numpy.random.Generator`` whose seed
sequence is keyed by the master seed plus a tuple of integers, so results do
not depend on the order in which independent runs execute.
"""
import zlib

import numpy as np

STREAMS = {"init": 1, "dropout": 2, "hpo": 3, "split": 4, "noise": 5, "batch": 6, "synth": 7}


def label_key(label):
    """Stable 32-bit integer for a string label (configuration ids etc.)."""
    return zlib.crc32(label.encode("utf-8"))


def stream(master_seed, name, *key):
    """Generator for stream ``name`` under ``master_seed`` and integer ``key``."""
    ints = [int(k) if not isinstance(k, str) else label_key(k) for k in key]
    ss = np.random.SeedSequence(entropy=int(master_seed) & (2**64 - 1),
                                spawn_key=(STREAMS[name], *ints))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(master_seed, *key):
    """A 63-bit seed derived from ``master_seed`` and ``key`` (hash of both)."""
    ints = [int(k) if not isinstance(k, str) else label_key(k) for k in key]
    ss = np.random.SeedSequence(entropy=int(master_seed) & (2**64 - 1), spawn_key=tuple(ints))
    return int(ss.generate_state(1, np.uint64)[0]) & (2**63 - 1)
