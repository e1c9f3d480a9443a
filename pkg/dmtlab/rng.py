"""Seeded random streams.

All randomness in dmtlab comes from numpy's Philox generator, a 64-bit
counter-based bit generator whose output is identical on every platform.
Substreams are keyed by extra integers (a timestep, a grid cell, a sample
index) so that work split across threads draws the same numbers as a
serial run.
"""

import numpy as np

from dmtlab.errors import ValidationError


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Return a generator for ``seed`` and an optional stream key."""
    if seed < 0 or any(k < 0 for k in stream):
        raise ValidationError(f"Seeds must be non-negative, got {(seed, *stream)}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream])))


def derive_seed(seed: int, *stream: int) -> int:
    """Collapse ``(seed, *stream)`` into a single 63-bit seed."""
    state = np.random.SeedSequence([seed, *stream]).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))
