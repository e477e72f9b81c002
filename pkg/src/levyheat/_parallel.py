"""Deterministic chunked map shared by the ensemble drivers.

Work is split into fixed-size chunks whose boundaries depend only on the item
count, never on the worker count, and partial results are combined in chunk
order.  Together with exact per-chunk arithmetic this makes every reduction
bit-identical for 1 worker and for N.
"""

from concurrent.futures import ThreadPoolExecutor


def chunk_bounds(n_items, chunk):
    return [(lo, min(lo + chunk, n_items)) for lo in range(0, n_items, chunk)]


def map_chunks(fn, n_items, chunk, workers=1):
    """fn(lo, hi) over fixed chunks; results returned in chunk order."""
    bounds = chunk_bounds(n_items, chunk)
    if workers <= 1 or len(bounds) <= 1:
        return [fn(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, lo, hi) for lo, hi in bounds]
        return [f.result() for f in futures]
