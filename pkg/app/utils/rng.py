# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Counter-based random streams.

Every simulation takes an explicit ``numpy.random.Generator``. Streams are
Philox generators spawned from one ``SeedSequence`` so chunk ``i`` of a run
always sees the same numbers, whatever the number of workers.
"""
# -------------------------------------------
from typing import Union

import numpy as np
from scipy.stats import norm

SeedLike = Union[int, np.random.SeedSequence, np.random.Generator]

_MANTISSA = float(2**53)


def make_rng(seed: SeedLike) -> np.random.Generator:
    """Return a Philox-backed generator for ``seed``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(int(seed))
    return np.random.Generator(np.random.Philox(seed))


def spawn_streams(seed: SeedLike, count: int) -> list[np.random.Generator]:
    """Independent child streams, one per chunk index."""
    if isinstance(seed, np.random.Generator):
        return seed.spawn(count)
    if isinstance(seed, np.random.SeedSequence):
        children = seed.spawn(count)
    else:
        children = np.random.SeedSequence(int(seed)).spawn(count)
    return [np.random.Generator(np.random.Philox(child)) for child in children]


def open_uniforms(rng: np.random.Generator, shape) -> np.ndarray:
    """Uniforms on the open interval (0, 1) from 53-bit integers."""
    return (rng.integers(0, 2**53, size=shape, dtype=np.int64) + 0.5) / _MANTISSA


def standard_normals(rng: np.random.Generator, shape) -> np.ndarray:
    """Gaussian variates by inverse-CDF transform of open uniforms."""
    return norm.ppf(open_uniforms(rng, shape))


def derive_seed(seed: SeedLike, stream: int) -> SeedLike:
    """Seed of an auxiliary stream, independent of every chunk stream of ``seed``."""
    if isinstance(seed, np.random.Generator):
        return seed.spawn(1)[0]
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=(*seed.spawn_key, 2**31 + stream))
    return np.random.SeedSequence([int(seed), stream])
