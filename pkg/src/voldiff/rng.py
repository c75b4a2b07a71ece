"""Deterministic, splittable random streams.

Every stochastic entry point takes a u64 seed and derives child streams with
:func:`derive_rng`. Streams are keyed by position (replicate index, view
index, ...), never by execution order, so results are identical no matter how
work is scheduled across threads.
"""

from __future__ import annotations

import numpy as np


def derive_rng(seed: int, *path: int) -> np.random.Generator:
    """Child generator for ``seed`` at a hierarchical integer path."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in path))
    return np.random.default_rng(ss)


def derive_seed(seed: int, *path: int) -> int:
    """Child u64 seed (for passing into configs that take scalar seeds)."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in path))
    return int(ss.generate_state(1, np.uint64)[0])
