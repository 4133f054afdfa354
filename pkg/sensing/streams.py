"""
Independent, reproducible random streams.

A stream is addressed by the master seed plus a key such as (kind, CPI index)
or (trial,). Keys are fed to ``SeedSequence`` as a spawn key, so a stream
never depends on how many other streams were drawn before it.
"""
from enum import IntEnum

import numpy as np


class Stream(IntEnum):
    ECHO_NOISE = 0
    SYMBOLS = 1
    GAIN_PHASE = 2
    TRIAL = 4


def derive_stream(seed, *key):
    """
    Generator for one (seed, key) pair

    Args:
        seed (int): Master seed, 0 <= seed < 2**64
        *key (int): Stream address, e.g. ``Stream.ECHO_NOISE, cpi``

    Returns:
        numpy.random.Generator: Fresh generator for that address
    """
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def trial_seed(master_seed, trial):
    """
    Seed of Monte-Carlo trial ``trial``; independent of the total number of trials

    Trial 0 runs on the master seed itself, so a single trial reproduces a plain run.
    """
    if int(trial) == 0:
        return int(master_seed)
    sequence = np.random.SeedSequence(int(master_seed), spawn_key=(int(Stream.TRIAL), int(trial)))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])
