"""Deterministic, splittable random streams.

Every stochastic routine takes an explicit stream.  Independent streams for
parallel work are derived from a root seed plus a tuple of integer labels
(sample index, epoch, shard, ...), so results never depend on how work is
scheduled across threads.
"""

import zlib

import numpy as np

_LABELS = {}


def _label(x):
    if isinstance(x, str):
        if x not in _LABELS:
            _LABELS[x] = zlib.crc32(x.encode("utf-8"))
        return _LABELS[x]
    return int(x)


def derive(seed, *labels):
    """Philox generator keyed by ``seed`` and ``labels``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF] + [_label(x) for x in labels])
    return np.random.Generator(np.random.Philox(ss))


def as_generator(rng):
    """Accept a seed, a Generator, or None (seed 0)."""
    if isinstance(rng, np.random.Generator):
        return rng
    return derive(0 if rng is None else rng)


def child_seed(rng):
    """Draw a 63-bit seed from ``rng`` for deriving sub-streams."""
    return int(as_generator(rng).integers(0, 2**63 - 1))
