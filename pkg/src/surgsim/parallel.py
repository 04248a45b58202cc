"""Row-partitioned thread pool.

Batched kernels here are elementwise over rows, and numpy releases the GIL
inside them, so contiguous row chunks can be processed concurrently without
changing a single bit of the result.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable

_pools: dict[int, ThreadPoolExecutor] = {}

# Below this many rows per chunk the dispatch overhead dominates.
MIN_CHUNK = 256


def default_workers() -> int:
    env = os.environ.get("SURGSIM_WORKERS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _pool(workers: int) -> ThreadPoolExecutor:
    pool = _pools.get(workers)
    if pool is None:
        pool = _pools[workers] = ThreadPoolExecutor(max_workers=workers, thread_name_prefix="surgsim-rows")
    return pool


def chunks(n: int, workers: int) -> list[slice]:
    parts = max(1, min(workers, n // MIN_CHUNK))
    bounds = [round(i * n / parts) for i in range(parts + 1)]
    return [slice(bounds[i], bounds[i + 1]) for i in range(parts)]


def for_rows(fn: Callable[[slice], None], n: int, workers: int | None = None) -> None:
    """Call ``fn(rows)`` over contiguous row slices covering ``range(n)``.

    ``fn`` must only touch its own rows; results are then independent of
    ``workers``.
    """
    workers = default_workers() if workers is None else max(1, int(workers))
    parts = chunks(n, workers)
    if len(parts) == 1:
        fn(parts[0])
        return
    for fut in [_pool(workers).submit(fn, s) for s in parts]:
        fut.result()
