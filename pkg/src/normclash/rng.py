"""Deterministic substream derivation.

Every random decision in the package flows through `substream(seed, index)`:
the master seed and a 64-bit stream index are mixed with the SplitMix64
finalizer and the result seeds an independent PCG64 generator.  Because the
mapping is pure, any work unit (a Monte Carlo chunk, a sample's attack, a
matrix cell) can be computed in any order, or in parallel, and still produce
identical results.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(x: int) -> int:
    """SplitMix64 finalizer: one 64-bit avalanche round."""
    x = (x + _GOLDEN) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def mix(seed: int, index: int) -> int:
    """64-bit substream key for (seed, index); well spread even for small inputs."""
    return splitmix64((splitmix64(seed & _MASK64) ^ (index & _MASK64)))


def substream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for substream `index` of master `seed`."""
    return np.random.Generator(np.random.PCG64(mix(seed, index)))
