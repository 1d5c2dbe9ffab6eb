"""Named deterministic RNG substreams derived from one master seed.

Every random draw in a run flows from the master seed through a named
substream, so experiment cells can differ in exactly one axis while
sharing all other randomness.
"""

from __future__ import annotations

import zlib

import numpy as np


def substream_seed(master_seed: int, *names: str | int) -> np.random.SeedSequence:
    entropy = [int(master_seed) & 0xFFFFFFFF]
    for name in names:
        if isinstance(name, int):
            entropy.append(name & 0xFFFFFFFF)
        else:
            entropy.append(zlib.crc32(str(name).encode("utf-8")))
    return np.random.SeedSequence(entropy)


def substream(master_seed: int, *names: str | int) -> np.random.Generator:
    return np.random.default_rng(substream_seed(master_seed, *names))
