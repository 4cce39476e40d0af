"""Counter-based random streams.

Every random draw in the package comes from ``stream(seed, *keys)``, a Philox
generator keyed by the seed plus a tuple of integers (stream id, epoch,
pair index, ...).  Results therefore do not depend on evaluation order.
"""

from __future__ import annotations

import numpy as np

# stream ids
PRETRAIN = 1
ROLLOUT = 2
SHUFFLE = 3
MONITOR = 4
EVAL = 5
VERIFY = 6
INIT = 7
BASELINE = 8


def stream(seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, *(int(k) for k in keys)])
    return np.random.Generator(np.random.Philox(ss))
