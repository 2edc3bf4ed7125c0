"""Seed-stable random stream derivation.

All stochastic code in this package draws from numpy PCG64 generators built
here, so a run is fully reproducible from one integer seed and any episode
can be replayed in isolation by rebuilding its stream from the same path.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, *path: int) -> np.random.Generator:
    """Generator for the stream identified by (seed, *path)."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(p) & 0xFFFFFFFFFFFFFFFF for p in path]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))
