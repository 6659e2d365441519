"""Fixed-size chunking of cell loops with optional worker threads.

Chunk boundaries never depend on the thread count and results are reduced
in chunk order, so output is bit-identical for any ``threads`` value.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

CHUNK = 32768


def chunks(n: int, size: int = CHUNK):
    return [(lo, min(lo + size, n)) for lo in range(0, n, size)]


def map_chunks(fn, n: int, threads: int = 1, size: int = CHUNK) -> list:
    parts = chunks(n, size)
    if threads <= 1 or len(parts) <= 1:
        return [fn(lo, hi) for lo, hi in parts]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda p: fn(*p), parts))
