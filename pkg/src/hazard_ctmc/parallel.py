"""Thread-count-invariant data parallelism.

Work is always split into the same fixed-size chunks regardless of how many
threads run them, and partial results are combined in chunk order, so
outputs are bitwise identical for any thread count.  The jitted kernels
release the GIL, which is what makes plain threads worthwhile here.
"""

import os
from concurrent.futures import ThreadPoolExecutor

ENV_THREADS = "HAZARD_CTMC_THREADS"


def thread_count(threads=None):
    """Resolve a thread count: explicit value, then env var, then all cores."""
    if threads is None:
        env = os.environ.get(ENV_THREADS, "").strip()
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def chunk_bounds(total, chunk):
    return [(a, min(a + chunk, total)) for a in range(0, total, chunk)]


def ordered_map(func, items, threads=None):
    """``list(map(func, items))``, possibly run on a thread pool."""
    items = list(items)
    workers = min(thread_count(threads), len(items))
    if workers <= 1:
        return [func(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))
