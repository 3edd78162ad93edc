import logging

import numpy as np

logger = logging.getLogger(__name__)


def seed_stream(master: int, trial: int) -> np.random.Generator:
    """
    Generator for one trial: Philox keyed by SeedSequence(master, spawn_key=(trial,)).
    The same (master, trial) always yields the same stream, independent of how many
    other trials exist or in which order workers pick them up.
    """
    if master < 0 or trial < 0:
        raise ValueError(f"seed and trial index must be non-negative, got {master}, {trial}")
    sequence = np.random.SeedSequence(int(master), spawn_key=(int(trial),))
    return np.random.Generator(np.random.Philox(sequence))
