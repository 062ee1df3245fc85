"""Seedable, splittable random streams.

Every stochastic routine takes an explicit ``numpy.random.Generator``
(PCG64, 64-bit state).  Child streams are derived through
``SeedSequence`` so that scene ``i`` of a batch depends only on
``(base_seed, i)`` and not on how many scenes were drawn before it.
"""

from __future__ import annotations

import numpy as np

RngState = np.random.Generator


def make_rng(seed: int | np.random.SeedSequence) -> RngState:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.Generator(np.random.PCG64(seed))
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(base_seed: int, *keys: int) -> int:
    """Deterministic 63-bit child seed for ``(base_seed, *keys)``."""
    ss = np.random.SeedSequence([int(base_seed), *[int(k) for k in keys]])
    return int(ss.generate_state(2, dtype=np.uint32).view(np.uint64)[0] >> np.uint64(1))


def split(rng: RngState, n: int) -> list[RngState]:
    return list(rng.spawn(n))
