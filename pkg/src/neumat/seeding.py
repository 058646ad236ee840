"""Named random sub-streams derived from a single run seed."""
import zlib

import numpy as np


def stream(seed, name):
    """Independent generator for ``name``; identical ``(seed, name)`` give identical draws."""
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, key]))
