"""Keyed random streams.

Draws are addressed by ``(seed, stream, entity id)`` rather than by position
in a sequence, so simulated entities come out the same regardless of how
many others are generated or in what order.
"""

import numpy as np

_M64 = np.uint64(0xFFFFFFFFFFFFFFFF)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


def _mix64(x):
    # splitmix64 finalizer; arithmetic wraps modulo 2**64.
    x = (x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return x ^ (x >> np.uint64(31))


def keyed_uniform(seed, stream, ids):
    """Uniform(0, 1) draws, one per entry of ``ids``, keyed by seed and stream."""
    ids = np.asarray(ids, dtype=np.uint64)
    with np.errstate(over="ignore"):
        key = _mix64(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) * _GOLDEN + np.uint64(stream))
        x = _mix64(key ^ _mix64((ids + np.uint64(1)) * _GOLDEN))
    # top 53 bits -> [0, 1)
    return (x >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def entity_rng(seed, *key):
    """A numpy Generator for one entity (group, cluster, replicate)."""
    return np.random.default_rng([int(seed), *(int(k) for k in key)])
