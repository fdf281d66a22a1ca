"""Named, splittable random streams derived from one top-level seed."""

import zlib

import numpy as np


def _key(part):
    if isinstance(part, (int, np.integer)):
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed, *names):
    """Return a Generator for the stream ``names`` under ``seed``.

    The same ``(seed, names)`` always yields the same sequence, independent of
    how many other streams were drawn before or on which worker.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(_key(n) for n in names))
    return np.random.Generator(np.random.PCG64(ss))
