"""Per-trial random streams.

Each trial gets its own Philox4x64 counter-based generator keyed by the
experiment seed, with the trial index (and an optional stream id) placed in
the high counter words. Trials are therefore independent of how they are
batched or distributed over workers.
"""

import numpy as np

MASK64 = (1 << 64) - 1


def trial_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    key = [seed & MASK64, (seed >> 64) & MASK64]
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, stream, index]))
