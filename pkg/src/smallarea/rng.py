"""Seeded random streams.

Every random draw in the package comes from a ``numpy.random.Generator``
backed by PCG64 whose state is derived from a master seed and a tuple of
non-negative integers naming the stream, e.g. ``(REPLICATE, r, DESIGN)``.
The derivation is ``SeedSequence(entropy=master, spawn_key=key)``, so two
streams with different keys never share state and results do not depend on
the order in which streams are created or on how work is scheduled.
"""

from __future__ import annotations

import numpy as np

# Purpose codes used as the first element of stream keys.
POPULATION = 1
AREA_SIZES = 2
DESIGN = 3
SPLIT = 4
FOREST = 5
LASSO_CV = 6
MCMC = 7
PREDICTIVE = 8
PERMUTATION = 9
REPLICATE = 10
FOLDS = 11


def stream(seed: int, *key: int) -> np.random.Generator:
    """Return the generator for stream ``key`` under master ``seed``."""
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
                                spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *key: int) -> int:
    """Mix ``seed`` and ``key`` into a new 64-bit seed.

    Used for replicate seeds: ``seed_r = derive_seed(master, REPLICATE, r)``.
    """
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF,
                                spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
