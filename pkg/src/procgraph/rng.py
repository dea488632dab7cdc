"""Counter-based random streams.

Every consumer derives its own generator from a root seed plus a tuple of
integer keys (attempt, branch index, search step, simulation slot, ...), so
results never depend on call order or thread scheduling.
"""

import numpy as np

_MASK64 = (1 << 64) - 1


def substream(seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK64, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
