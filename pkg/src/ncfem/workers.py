"""Ordered fan-out for independent per-element work."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

_LOGGER = logging.getLogger(__name__)

THREADS_ENV = "NCFEM_THREADS"

T = TypeVar("T")
R = TypeVar("R")


def effective_workers(requested: int) -> int:
    """Cap *requested* by ``NCFEM_THREADS`` when that variable holds a positive integer."""
    requested = max(1, int(requested))
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return requested
    try:
        cap = int(raw)
    except ValueError:
        _LOGGER.warning("Ignoring non-integer %s=%r", THREADS_ENV, raw)
        return requested
    if cap < 1:
        _LOGGER.warning("Ignoring non-positive %s=%r", THREADS_ENV, raw)
        return requested
    return min(requested, cap)


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> list[R]:
    """Apply *fn* to every item and return the results in input order."""
    items = list(items)
    count = effective_workers(workers)
    if count == 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=count) as pool:
        return list(pool.map(fn, items))
