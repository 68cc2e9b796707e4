"""Seed handling shared by every stochastic routine in the package.

All randomness flows through numpy's PCG64 bit generator.  A master seed is
expanded with :class:`numpy.random.SeedSequence` together with a fixed stream
tag, so map choices, observation noise, start points and replicate seeds never
share a stream even when they are derived from the same master seed.
"""

import numpy as np

MAP_STREAM = 0
NOISE_STREAM = 1
START_STREAM = 2
REPLICATE_STREAM = 3
REFERENCE_STREAM = 4
COPULA_STREAM = 5

_MASK64 = (1 << 64) - 1


def make_rng(seed: int, stream: int, *extra: int) -> np.random.Generator:
    """Return a PCG64 generator for ``(seed, stream, *extra)``."""
    key = [int(seed) & _MASK64, int(stream), *(int(e) for e in extra)]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(key)))


def derive_seed(seed: int, stream: int, index: int) -> int:
    """Derive a 64-bit child seed, e.g. for replicate ``index``."""
    ss = np.random.SeedSequence([int(seed) & _MASK64, int(stream), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
