"""Reproducible random substreams.

All randomness comes from numpy's PCG64 bit generator. A substream is
identified by a master seed plus a tuple of nonnegative integer keys
(e.g. ``(sweep_point, block_index)``); :class:`numpy.random.SeedSequence`
hashes the pair into an independent state. The same keys always give the
same stream, whatever order blocks are executed in.
"""

from __future__ import annotations

import numpy as np

__all__ = ["substream", "derive_seed"]

_MASK64 = (1 << 64) - 1


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= _MASK64:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def substream(seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(_check_seed(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *keys: int) -> int:
    """A 64-bit child seed, used to hand a sweep point its own master seed."""
    ss = np.random.SeedSequence(_check_seed(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
