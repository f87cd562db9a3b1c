"""Counter-based random streams and chunked execution.

Every random draw made by the samplers comes from a generator keyed by
``(seed, purpose, time, ..., chunk)``.  Work is split into fixed-size chunks
of theta-particles, so the numbers drawn never depend on how many workers
process the chunks.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

# purposes
PRIOR = 1
STEP = 2
RESAMPLE = 3
MOVE = 4
TERMINAL = 5
EXTRACT = 6
BRIDGE_INIT = 7
PREDICT = 8

WORKERS_ENV = "SMCFW_WORKERS"


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def chunks(n: int, size: int) -> list[slice]:
    return [slice(i, min(i + size, n)) for i in range(0, n, size)]


def map_chunks(fn, slices, workers: int | None = None) -> list:
    """Apply ``fn(chunk_index, slice)`` to every chunk, results in chunk order."""
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(slices) <= 1:
        return [fn(i, s) for i, s in enumerate(slices)]
    return list(_pool(workers).map(fn, range(len(slices)), slices))


_POOLS: dict[int, ThreadPoolExecutor] = {}


def _pool(workers: int) -> ThreadPoolExecutor:
    if workers not in _POOLS:
        _POOLS[workers] = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="smcfw")
    return _POOLS[workers]
