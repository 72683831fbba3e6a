"""Seeded random streams.

Every consumer of randomness draws from its own stream derived from the run
seed, so adding draws in one place never shifts another. A stream is a
``numpy.random.Generator`` over PCG64 whose ``SeedSequence`` has the run seed
as entropy and ``(consumer_key, *extra)`` as spawn key. Consumer keys are
fixed integers; string keys (object ids) are folded through CRC-32.
"""

import zlib

import numpy as np

INIT = 1
DROPOUT = 2
SHUFFLE = 3
KMEANS = 4
SPLIT = 5
SYNTH = 6

_NAMES = {
    "init": INIT,
    "dropout": DROPOUT,
    "shuffle": SHUFFLE,
    "kmeans": KMEANS,
    "split": SPLIT,
    "synth": SYNTH,
}


def _key(part):
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def stream(seed, consumer, *extra):
    """Return the generator for ``consumer`` (name or key) under ``seed``."""
    if isinstance(consumer, str):
        consumer = _NAMES[consumer]
    spawn_key = (consumer,) + tuple(_key(p) for p in extra)
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.PCG64(ss))
