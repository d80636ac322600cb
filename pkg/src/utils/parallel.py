"""
Ordered worker pool
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> List[R]:
    """
    Apply fn to every item, optionally on a thread pool

    Results come back in item order whatever the pool size, so anything
    merged from them is independent of scheduling.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    logger.debug(f"Dispatching {len(items)} tasks to {workers} workers")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
