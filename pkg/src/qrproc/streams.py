"""Per-replicate random streams.

Replicate ``r`` of a run seeded with ``base_seed`` always draws from the same
Philox stream keyed by (base_seed, purpose, r), so results do not depend on
the order in which replicates are executed or on how they are split across
workers.
"""

from __future__ import annotations

import numpy as np

# purpose tags keep streams of different consumers apart
RESAMPLE = 1
MULTIPLIER = 2
MC_DATA = 3
MC_BOOT = 4
SUBSAMPLE = 5


def replicate_rng(base_seed: int, index: int, purpose: int = RESAMPLE) -> np.random.Generator:
    if base_seed < 0 or index < 0:
        raise ValueError("seeds and replicate indices must be non-negative")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(base_seed), int(purpose), int(index)])))


def replicate_seed(base_seed: int, index: int, purpose: int) -> int:
    """A derived 63-bit integer seed, for nested runs that take a base seed themselves."""
    ss = np.random.SeedSequence([int(base_seed), int(purpose), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
