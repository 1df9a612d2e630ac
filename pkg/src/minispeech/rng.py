"""Seed discipline: every random draw comes from a generator keyed by
(base seed, purpose tag, step), so any stage can be replayed bit-identically
and no two purposes ever share a stream.
"""

from __future__ import annotations

from zlib import crc32

import numpy as np


def make_rng(seed: int, purpose: str, step: int = 0) -> np.random.Generator:
    key = np.random.SeedSequence((int(seed), crc32(purpose.encode("utf-8")), int(step)))
    return np.random.Generator(np.random.PCG64(key))
