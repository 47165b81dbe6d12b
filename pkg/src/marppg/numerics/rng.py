"""Seeded random streams.

All randomness goes through numpy's PCG64 generator.  Independent streams
are keyed by ``(seed, *key)`` through ``SeedSequence`` so that e.g. clip 7
of a dataset draws the same numbers whether clips are generated serially
or in parallel.
"""

from __future__ import annotations

import numpy as np

# stream keys
INIT_STREAM = 0
TRAIN_STREAM = 1
SYNTH_STREAM = 2


def make_rng(seed: int, *key: int) -> np.random.Generator:
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, *(int(k) for k in key)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
