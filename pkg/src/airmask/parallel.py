"""Deterministic worker-thread helper.

Results are always collected in submission order, so a reduction over the
returned list is independent of thread scheduling and `threads=1` reproduces
any `threads=N` run bit for bit.
"""

from concurrent.futures import ThreadPoolExecutor


def thread_map(func, items, threads=1):
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))
