"""Deterministic stream derivation for experiments.

Single-path samplers take an explicit integer seed (callers derive one per
path, e.g. master_seed + path_index); batch engines derive one stream per
(master_seed, tag) so a whole experiment is bit-reproducible.
"""

from __future__ import annotations

import numpy as np


def stream_rng(master_seed: int, tag: str = "") -> np.random.Generator:
    """Generator for a vectorized batch; `tag` separates streams of one run."""
    key = tuple(ord(c) for c in tag)
    return np.random.default_rng(np.random.SeedSequence((master_seed,) + key))
