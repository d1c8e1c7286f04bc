"""Named random streams.

Every stochastic routine takes a root ``seed`` plus integer stream keys
(chain, stratum, replicate...). Each key tuple maps to an independent
Philox generator, so parallel work never shares state.
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Return the Philox generator for ``(seed, *keys)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
