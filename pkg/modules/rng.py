"""
Reproducible random streams.

Every stream is a Philox counter-based generator keyed from the master
seed and a (stream, index) pair, so a replica draws the same numbers
whichever worker runs it and in whatever order.
"""

from enum import IntEnum

import numpy as np

U64_MASK = (1 << 64) - 1


class Stream(IntEnum):
    ORBIT = 0
    REFERENCE = 1
    ORACLE = 2


def make_rng(seed: int, stream: Stream = Stream.ORBIT, index: int = 0) -> np.random.Generator:
    """Generator for `index` within `stream`, derived from `seed`"""
    seq = np.random.SeedSequence(int(seed) & U64_MASK, spawn_key=(int(stream), int(index)))
    return np.random.Generator(np.random.Philox(seq))


def raw_words(rng: np.random.Generator, n: int) -> np.ndarray:
    """n raw 64-bit words from the underlying bit generator.

    Drawing n words at once or one at a time yields the same sequence.
    """
    return np.asarray(rng.bit_generator.random_raw(n), dtype=np.uint64).reshape(-1)


def raw_word(rng: np.random.Generator) -> int:
    return int(rng.bit_generator.random_raw())
