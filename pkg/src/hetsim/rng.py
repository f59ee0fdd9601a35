"""Named, splittable random substreams.

Every stream is a Philox (counter-based) generator keyed by the global seed
and a ``(name, index)`` pair, so adding an entity never shifts the draws
seen by another one.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream_key(name: str) -> int:
    # crc32 rather than hash(): str hashing is salted per process
    return zlib.crc32(name.encode("utf-8"))


def substream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(stream_key(name), index))
    return np.random.Generator(np.random.Philox(ss))
