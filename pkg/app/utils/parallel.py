# -------------------------------------------
# Author: Nils Gies
# -------------------------------------------
"""Chunked worker pool for path and scenario simulation."""
# -------------------------------------------
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional, TypeVar

import numpy as np

from app.utils.rng import SeedLike, spawn_streams

logger = logging.getLogger(__name__)

T = TypeVar("T")

DEFAULT_CHUNK = 4096


def default_workers() -> int:
    return os.cpu_count() or 1


def chunk_sizes(total: int, chunk: int) -> list[int]:
    full, rest = divmod(total, chunk)
    return [chunk] * full + ([rest] if rest else [])


def map_chunks(
    job: Callable[[int, np.random.Generator], T],
    total: int,
    seed: SeedLike,
    chunk: int = DEFAULT_CHUNK,
    workers: Optional[int] = None,
) -> list[T]:
    """Run ``job(size, rng)`` over fixed-size chunks, results in chunk order.

    Chunk boundaries and streams depend only on ``total``, ``chunk`` and
    ``seed``; the worker count changes wall time, never the numbers.
    """
    sizes = chunk_sizes(total, chunk)
    streams = spawn_streams(seed, len(sizes))
    workers = workers or default_workers()
    if workers == 1 or len(sizes) == 1:
        return [job(size, rng) for size, rng in zip(sizes, streams)]
    logger.debug(f"Dispatching {len(sizes)} chunks to {workers} workers")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, sizes, streams))
