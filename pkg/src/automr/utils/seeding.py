"""Named random streams derived from one master seed."""

from enum import IntEnum

import numpy as np


class Stream(IntEnum):
    """Independent consumers of randomness."""

    INIT = 0
    BATCH = 1
    EPISODE = 2
    PROMPT = 3
    CANDIDATE = 4
    EVAL = 5


def stream_rng(seed: int, stream: Stream, *index: int) -> np.random.Generator:
    """Generator for ``stream`` (and optional sub-indices) under ``seed``.

    The same arguments always give the same sequence; different streams
    never share state.
    """
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(int(stream), *index))
    return np.random.default_rng(sequence)


def child_seeds(rng: np.random.Generator, count: int) -> list:
    """Draw ``count`` seeds for sub-generators, in a fixed order."""
    return [int(s) for s in rng.integers(0, 2**63 - 1, size=count, dtype=np.int64)]
