"""Fixed-chunk thread map.

Chunk boundaries depend only on the problem size and ``chunk_size``; results
come back in chunk order. Reductions over the returned list therefore give
the same floating-point result for any thread count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

T = TypeVar("T")


def default_threads() -> int:
    return os.cpu_count() or 1


def chunk_ranges(n: int, chunk_size: int) -> list[tuple[int, int]]:
    if chunk_size < 1:
        raise ValueError("chunk_size must be >= 1")
    return [(a, min(a + chunk_size, n)) for a in range(0, n, chunk_size)]


def map_chunks(fn: Callable[[int, int], T], n: int, chunk_size: int, threads: int | None = None) -> list[T]:
    ranges = chunk_ranges(n, chunk_size)
    threads = default_threads() if threads is None else int(threads)
    if threads < 1:
        raise ValueError("threads must be >= 1")
    if threads == 1 or len(ranges) <= 1:
        return [fn(a, b) for a, b in ranges]
    with ThreadPoolExecutor(max_workers=min(threads, len(ranges))) as pool:
        return list(pool.map(lambda ab: fn(*ab), ranges))


def ordered_sum(parts):
    """Left-to-right sum, never reordered."""
    it = iter(parts)
    total = next(it)
    total = total.copy() if hasattr(total, "copy") else total
    for p in it:
        total = total + p
    return total
