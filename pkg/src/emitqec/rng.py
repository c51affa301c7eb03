"""Counter-based random streams.

Every stream is keyed by (master seed, stream id, counter), so results do not
depend on how work is split across threads or processes.
"""
from __future__ import annotations

import numpy as np

STREAMS = {"protocol": 0, "table": 1, "qec": 2, "bench": 3}


def stream(master_seed: int, name: str | int, counter: int = 0) -> np.random.Generator:
    sid = STREAMS[name] if isinstance(name, str) else int(name)
    if master_seed < 0 or counter < 0:
        raise ValueError("seed and counter must be non-negative")
    seq = np.random.SeedSequence([int(master_seed), sid, int(counter)])
    return np.random.Generator(np.random.Philox(seq))
