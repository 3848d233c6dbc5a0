"""Seedable, labelled random streams.

Every stream is a Philox (counter-based) bit generator keyed by the master
seed and a label such as ``"truth"``, ``"obs"`` or ``"filter"``.  Streams
with different labels are statistically independent, and changing one label's
consumption never shifts another stream.
"""
import zlib

import numpy as np


def _label_key(label):
    return zlib.crc32(str(label).encode("utf-8"))


def stream(seed, label, *sublabels):
    """Return a ``numpy.random.Generator`` for ``(seed, label, *sublabels)``."""
    key = tuple(_label_key(x) for x in (label, *sublabels))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


def substreams(seed, label, n):
    """``n`` independent generators, one per ensemble member or chain."""
    return [stream(seed, label, i) for i in range(n)]
