"""Named, independent random streams derived from one experiment seed.

Every stochastic component (world build, each data window, each model's
initializer, batch shuffling) pulls from its own stream so that adding or
removing a component never perturbs the draws of another.  This is what makes
bitwise run-to-run comparisons between trainer variants possible.
"""

from __future__ import annotations

import zlib

import numpy as np


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        if tag < 0:
            raise ValueError(f"stream tag must be non-negative, got {tag}")
        return int(tag)
    if isinstance(tag, str):
        return zlib.crc32(tag.encode("utf-8"))
    raise TypeError(f"stream tag must be int or str, got {type(tag).__name__}")


def stream(seed: int, *tags) -> np.random.Generator:
    """Return the generator for (seed, tags); identical inputs, identical stream."""
    entropy = [int(seed)] + [_tag_to_int(t) for t in tags]
    return np.random.default_rng(np.random.SeedSequence(entropy))
