"""Named, reproducible random substreams.

Every stochastic step draws from a PCG64 generator keyed by the root seed, a
stream name and optional integer indices, so any episode (or any stage inside
it) can be re-run in isolation.
"""
import zlib

import numpy as np


def stream_key(name):
    return zlib.crc32(name.encode("utf-8"))


def substream(seed, name, *indices):
    """Return a generator for ``(seed, name, *indices)``.

    The same arguments always give the same sequence of draws, independent of
    what other streams have consumed.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, stream_key(name), *[int(i) for i in indices]]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
