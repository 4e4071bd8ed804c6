"""Order-preserving data-parallel map over independent evaluations."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

__all__ = ["resolve_threads", "parallel_map"]


def resolve_threads(threads: int | None = None) -> int:
    """Explicit count, else QPLAB_THREADS, else 1."""
    if threads is None:
        env = os.environ.get("QPLAB_THREADS", "").strip()
        threads = int(env) if env else 1
    if threads < 1:
        raise ValueError("thread count must be >= 1")
    return int(threads)


def parallel_map(fn, items, threads: int | None = None) -> list:
    """[fn(x) for x in items], fanned out over a process pool when threads > 1.

    Results come back in input order, so output is independent of the pool size.
    """
    items = list(items)
    n = resolve_threads(threads)
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    chunk = max(1, len(items) // (4 * n))
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items, chunksize=chunk))
