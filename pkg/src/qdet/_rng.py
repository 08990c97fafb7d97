"""Small RNG helpers."""

from __future__ import annotations

import numpy as np


def as_generator(seed) -> np.random.Generator:
    """Return ``seed`` unchanged if it already is a Generator, else seed a new one."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
