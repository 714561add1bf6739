"""Seed discipline: named, splittable streams derived from one top-level seed.

Work is cut into fixed-size chunks and every chunk draws from its own child
stream, so results do not depend on how many workers process the chunks.
"""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np

THREADS_ENV = "SQTOMO_THREADS"


def stream(seed: int, name: str = "", *indices: int) -> np.random.Generator:
    """Generator for the sub-stream ``(seed, name, *indices)``."""
    key = [zlib.crc32(name.encode())] if name else []
    key.extend(int(i) for i in indices)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def n_workers() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def map_chunks(fn, n_chunks: int) -> list:
    """Evaluate ``fn(i)`` for each chunk index, in order, possibly on a thread pool."""
    workers = min(n_workers(), n_chunks)
    if workers <= 1:
        return [fn(i) for i in range(n_chunks)]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, range(n_chunks)))
