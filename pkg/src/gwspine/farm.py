"""Replica farm: fixed-size chunks of replicas run on a thread pool.

Chunk boundaries depend only on the replica count and the chunk size, never
on the number of workers, and results come back in replica order.  Together
with per-replica random keys this makes every run identical at any degree
of parallelism.  The compiled kernels release the GIL, so threads give real
concurrency there.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterator, Sequence, TypeVar

T = TypeVar("T")

JOBS_ENV = "GWSPINE_JOBS"


def resolve_jobs(jobs: int | None = None) -> int:
    if jobs is None:
        env = os.environ.get(JOBS_ENV)
        jobs = int(env) if env else 1
    if jobs <= 0:
        jobs = os.cpu_count() or 1
    return int(jobs)


def chunks(n: int, size: int) -> list[tuple[int, int]]:
    size = max(1, int(size))
    return [(s, min(size, n - s)) for s in range(0, n, size)]


def chunk_size_for(expected_nodes_per_replica: float, budget: float = 2e6, cap: int = 4096) -> int:
    """Replicas per chunk so that one chunk holds about ``budget`` nodes."""
    per = max(1.0, float(expected_nodes_per_replica))
    return int(max(1, min(cap, budget // per)))


def run(fn: Callable[[int, int], T], n: int, chunk: int, jobs: int | None = None) -> list[T]:
    """Evaluate ``fn(start, count)`` over consecutive replica chunks.

    Returns the per-chunk results in chunk order.
    """
    parts = chunks(n, chunk)
    jobs = resolve_jobs(jobs)
    if jobs == 1 or len(parts) == 1:
        return [fn(s, c) for s, c in parts]
    with ThreadPoolExecutor(max_workers=min(jobs, len(parts))) as ex:
        return list(ex.map(lambda sc: fn(*sc), parts))


def iter_run(fn: Callable[[int, int], T], n: int, chunk: int, jobs: int | None = None) -> Iterator[T]:
    """Like :func:`run` but yields results as they complete, in order,
    holding at most ``jobs`` chunk results in memory."""
    parts = chunks(n, chunk)
    jobs = resolve_jobs(jobs)
    if jobs == 1:
        for s, c in parts:
            yield fn(s, c)
        return
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        pending = []
        it = iter(parts)
        for sc in it:
            pending.append(ex.submit(fn, *sc))
            if len(pending) >= jobs:
                break
        for sc in it:
            yield pending.pop(0).result()
            pending.append(ex.submit(fn, *sc))
        for fut in pending:
            yield fut.result()


def concat(results: Sequence, key: str):
    import numpy as np

    return np.concatenate([r[key] for r in results])
