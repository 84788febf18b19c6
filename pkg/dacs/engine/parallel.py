import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, TypeVar

import numpy as np

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> List[R]:
    """Ordered map, in a process pool when ``workers > 1``.

    ``fn`` must be a module-level function. Results come back in input order, so callers that
    seed each item independently get identical output for any worker count.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    chunk = max(1, len(items) // (4 * workers))
    logger.debug(f"Mapping {len(items)} jobs over {workers} processes (chunksize={chunk})")
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


def spawn_seeds(master_seed: int, count: int) -> List[int]:
    """Independent 32-bit seeds derived from one master seed."""
    children = np.random.SeedSequence(master_seed).spawn(count)
    return [int(child.generate_state(1)[0]) for child in children]
