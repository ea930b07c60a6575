"""Order-preserving parallel map used by the batch stages."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def default_jobs() -> int:
    try:
        return max(1, len(os.sched_getaffinity(0)))
    except AttributeError:  # pragma: no cover - non-Linux
        return max(1, os.cpu_count() or 1)


def parallel_map(fn: Callable[[T], R], items: Iterable[T], jobs: int | None = None) -> list[R]:
    """``list(map(fn, items))`` spread over ``jobs`` processes.

    Results come back in input order, so output never depends on the worker
    count. ``fn`` must be picklable (a module-level function or partial).
    """
    items = list(items)
    jobs = default_jobs() if jobs is None else int(jobs)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * jobs))))
