"""Worker-count control for per-class fan-out."""

import os
from concurrent.futures import ThreadPoolExecutor

ENV_THREADS = "GRAPHWALK_THREADS"


def max_workers() -> int:
    cap = os.environ.get(ENV_THREADS)
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return n


def ordered_map(fn, items):
    """``map`` over a thread pool; results keep input order."""
    items = list(items)
    workers = min(max_workers(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
