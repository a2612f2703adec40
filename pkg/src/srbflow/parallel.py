"""Thread budget shared by the whole package (env var SRBFLOW_THREADS, 0 = auto)."""

from __future__ import annotations

import contextlib
import os
from concurrent.futures import ThreadPoolExecutor

from threadpoolctl import threadpool_limits

ENV_VAR = "SRBFLOW_THREADS"


def thread_count() -> int:
    """Configured cap, or 0 for automatic."""
    raw = os.environ.get(ENV_VAR, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{ENV_VAR} must be a non-negative integer, got {raw!r}") from None
    if n < 0:
        raise ValueError(f"{ENV_VAR} must be a non-negative integer, got {n}")
    return n


def worker_count() -> int:
    return thread_count() or (os.cpu_count() or 1)


@contextlib.contextmanager
def thread_budget():
    """Cap BLAS/OpenMP pools at SRBFLOW_THREADS for the duration of the block."""
    n = thread_count()
    if n == 0:
        yield
        return
    with threadpool_limits(limits=n):
        yield


def pmap(fn, items) -> list:
    """Order-preserving map over a thread pool sized by the budget."""
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
