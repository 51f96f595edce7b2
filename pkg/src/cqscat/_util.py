"""Small shared helpers."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def parallel_map(fn, items, threads=None):
    """Apply ``fn`` over ``items``, merging results in index order.

    Each item is processed independently, so the result is identical for
    any thread count. scipy/numpy kernels release the GIL enough for
    thread-level parallelism to pay off on the per-frequency workloads.
    """
    items = list(items)
    n = threads if threads is not None else (os.cpu_count() or 1)
    if n <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
