"""Shared plumbing."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV = "BOUNDBENCH_THREADS"


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def map_samples(fn: Callable[[T], R], items: Sequence[T]) -> list[R]:
    """Apply fn to items, possibly with threads, preserving order.

    The reduction order (list order) is fixed regardless of worker count,
    so parallelism never changes results.
    """
    workers = worker_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
