"""
Worker pool for independent tasks (CV folds, benchmark trials, sweep combinations).

Tasks must be picklable top-level callables; results come back in input
order, so output files do not depend on the number of workers.
"""

from __future__ import annotations

import logging
from multiprocessing import Pool
from typing import Callable, Iterable, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

logger = logging.getLogger(__name__)


def parallel_map(fn: Callable[[T], R], items: Iterable[T], jobs: int = 1) -> list[R]:
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    logger.info(f"Running {len(items)} tasks on {jobs} workers")
    with Pool(processes=jobs) as pool:
        return pool.map(fn, items)


def derive_seed(*keys: int) -> int:
    """Splittable counter scheme: (seed, index, ...) → independent 32-bit stream seed."""
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])
