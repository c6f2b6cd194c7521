"""Deterministic seed derivation for nested parallel work.

Every random decision in the package flows from one master seed through
`derive_seed`/`derive_rng`, keyed by structural indices (feature index,
tree index).  Work scheduled on any number of threads therefore sees the
same random streams as a serial run.
"""

from __future__ import annotations

import numpy as np

_U64 = np.uint64


def derive_seed(*parts: int) -> int:
    """Mix integer parts into a stable 64-bit child seed.

    Uses numpy's SeedSequence hashing, which is documented to be
    reproducible across platforms and releases.
    """
    state = np.random.SeedSequence(
        [int(p) & 0xFFFFFFFFFFFFFFFF for p in parts]
    ).generate_state(2)
    return int(_U64(state[0]) << _U64(32) | _U64(state[1]))


def derive_rng(*parts: int) -> np.random.Generator:
    """A fresh Generator seeded from the mixed parts."""
    return np.random.default_rng(derive_seed(*parts))
