"""
Keyed random number streams
Every draw in the toolkit comes from a Philox generator keyed by
(master seed, stream id, ...), so chains and replicates are reproducible
independent of scheduling.
"""

from enum import IntEnum
from typing import Sequence, Tuple, Union

import numpy as np

SeedKey = Union[int, Sequence[int]]


class Stream(IntEnum):
    """Stream ids reserved for each consumer of randomness"""
    SAMPLE = 0
    NORMALIZER = 1
    MALA_INIT = 2
    MALA_PROPOSAL = 3
    MALA_ACCEPT = 4
    SUBSELECT = 5
    MONTE_CARLO = 6
    LF_ONLY = 7
    OVERLAP = 8
    ORACLE = 9
    TUNING = 10
    REPLICATE = 11


def as_key(seed: SeedKey, *extra: int) -> Tuple[int, ...]:
    """Normalize a seed (int or tuple) and append sub-stream ids"""
    if isinstance(seed, (int, np.integer)):
        base = (int(seed),)
    else:
        base = tuple(int(s) for s in seed)
    key = base + tuple(int(e) for e in extra)
    if any(k < 0 for k in key):
        raise ValueError(f"seed keys must be non-negative, got {key}")
    return key


def make_rng(seed: SeedKey, *extra: int) -> np.random.Generator:
    """
    Counter-based generator for the stream identified by (seed, *extra)

    The first key entry is the entropy and the rest the spawn key, so keys
    that differ only by trailing zeros still get distinct streams.
    """
    key = as_key(seed, *extra)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key[0], spawn_key=key[1:])))
