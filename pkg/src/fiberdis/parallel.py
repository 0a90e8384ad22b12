"""Worker pool and order-independent reductions.

Work is always split into chunks whose boundaries depend only on the problem
size, never on the worker count, and partial results are combined in chunk
order with compensated summation.  Single- and multi-threaded runs therefore
produce bitwise identical numbers.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

import numpy as np

_THREADS = 1
DEFAULT_BUDGET = 1 << 24


def get_threads() -> int:
    return _THREADS


def set_threads(n: int) -> None:
    global _THREADS
    if n < 1:
        raise ValueError("thread count must be positive")
    _THREADS = int(n)


@contextmanager
def threads(n: int):
    old = get_threads()
    set_threads(n)
    try:
        yield
    finally:
        set_threads(old)


def enumeration_budget() -> int:
    """Hard cap on enumerated branch words (``FIBERDIS_BUDGET``)."""
    raw = os.environ.get("FIBERDIS_BUDGET")
    if raw is None:
        return DEFAULT_BUDGET
    return int(float(raw))


def ordered_map(fn, items):
    """``[fn(i) for i in items]`` evaluated on the worker pool, order kept."""
    items = list(items)
    if _THREADS == 1 or len(items) < 2:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=_THREADS) as pool:
        return list(pool.map(fn, items))


def pairwise_sum(a, axis=0):
    """Pairwise (cascade) sum along ``axis``.

    numpy only uses its pairwise kernel along the contiguous axis, so the
    reduced axis is moved last and made contiguous first.
    """
    a = np.asarray(a, dtype=float)
    a = np.ascontiguousarray(np.moveaxis(a, axis, -1))
    return np.add.reduce(a, axis=-1)


def neumaier_sum(parts):
    """Compensated sum of a sequence of equally shaped arrays, in order."""
    parts = list(parts)
    if not parts:
        return 0.0
    s = np.array(parts[0], dtype=float, copy=True)
    c = np.zeros_like(s)
    for p in parts[1:]:
        p = np.asarray(p, dtype=float)
        t = s + p
        big = np.abs(s) >= np.abs(p)
        c += np.where(big, (s - t) + p, (p - t) + s)
        s = t
    return s + c


def stable_mean(values) -> float:
    v = np.ravel(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("mean of empty sample")
    if v.min() == v.max():
        return float(v[0])
    return float(pairwise_sum(v)) / v.size
