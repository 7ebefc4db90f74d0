"""Thread pool helper for independent numeric work items."""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

from .config import worker_count

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Iterable[T]) -> List[R]:
    """
    Apply fn to every item, preserving input order in the result.

    Runs inline when only one worker is configured or there is a single item.

    Args:
        fn: Function without shared mutable state
        items: Work items

    Returns:
        Results in the order of items
    """
    items = list(items)
    workers = min(worker_count(), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
