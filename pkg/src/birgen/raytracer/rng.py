"""Counter-based uniforms: one splitmix64 chain per (seed, ray, bounce, slot).

Any ray can be replayed in isolation, which keeps traces independent of
scheduling and lets the compiled and Python kernels draw identical numbers.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def splitmix64(x):
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = x + _GOLDEN
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def seed_key(seed) -> np.uint64:
    return splitmix64(np.uint64(int(seed) & _MASK))


def uniform(key, ray, bounce, slot):
    """Uniform doubles in [0, 1) for arrays of ray indices."""
    ray = np.asarray(ray, dtype=np.uint64)
    bs = (np.asarray(bounce, dtype=np.uint64) << np.uint64(3)) | np.uint64(slot)
    z = splitmix64(splitmix64(np.uint64(key) ^ ray) ^ bs)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
