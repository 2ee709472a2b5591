import zlib

import numpy as np


def _key(k) -> int:
    if isinstance(k, (int, np.integer)):
        return int(k)
    return zlib.crc32(str(k).encode())


def derive_seed(seed: int, *keys) -> int:
    """Deterministic sub-seed for a named stage, e.g. ``derive_seed(7, "chain", 3)``.

    Counter based: the result depends only on ``seed`` and ``keys``, so any
    stage can be rerun in isolation.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint32)[0])
