"""Small shared utilities: thread pool sizing and order-preserving maps."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor


def thread_count():
    """Worker count from GSD_THREADS (default 1, floor 1)."""
    raw = os.environ.get("GSD_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"GSD_THREADS must be an integer, got {raw!r}") from None


def map_indexed(fn, items, workers=None):
    """Apply fn over items, preserving order regardless of worker count.

    Results are merged by index, so outputs are identical for any
    GSD_THREADS setting.
    """
    workers = thread_count() if workers is None else max(1, workers)
    items = list(items)
    if workers == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
