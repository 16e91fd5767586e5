from typing import List

import numpy as np


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for the stream identified by (seed, *keys)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))


def derive_seed(seed: int, *keys: int) -> int:
    """Stable 63-bit integer seed for the stream identified by (seed, *keys)."""
    state = np.random.SeedSequence([int(seed), *[int(k) for k in keys]]).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def spawn_seeds(seed: int, count: int) -> List[int]:
    # distinct per-client seeds, stable under changes of `count` for the leading ids
    return [derive_seed(seed, 0xC11E, i) for i in range(count)]
