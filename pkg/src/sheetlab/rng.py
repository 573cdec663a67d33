"""Seeded random streams.

Every random draw in the package comes from a Philox counter-based
generator keyed by ``seed ^ stream``. Replicate ``i`` of a run always uses
stream ``i``, so a parallel map over replicates reproduces the serial run
exactly.
"""

import numpy as np

MASK64 = (1 << 64) - 1


def stream_key(seed: int, stream: int = 0) -> int:
    return (int(seed) ^ int(stream)) & MASK64


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=stream_key(seed, stream)))
