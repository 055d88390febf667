"""Bounded, order-preserving worker pool used by the attribute and K-means stages."""

from __future__ import annotations

import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Iterator, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def resolve_workers(workers: int) -> int:
    """Map the ``0 = all cores`` convention to a concrete positive count."""
    if workers < 0:
        raise ValueError(f"worker count must be >= 0, got {workers}")
    if workers == 0:
        try:
            return max(1, len(os.sched_getaffinity(0)))
        except AttributeError:  # not available on every platform
            return max(1, os.cpu_count() or 1)
    return workers


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> Iterator[R]:
    """Yield ``fn(item)`` in input order, keeping at most ``2 * workers`` tasks in flight.

    With one worker everything runs inline on the calling thread. Results never
    depend on the worker count because each task is computed independently and
    consumed in submission order.
    """
    workers = resolve_workers(workers)
    if workers == 1:
        for item in items:
            yield fn(item)
        return

    window = 2 * workers
    with ThreadPoolExecutor(max_workers=workers) as pool:
        pending = deque()
        for item in items:
            pending.append(pool.submit(fn, item))
            if len(pending) >= window:
                yield pending.popleft().result()
        while pending:
            yield pending.popleft().result()
