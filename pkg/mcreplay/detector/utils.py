import asyncio
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, List, Sequence, TypeVar, Union

import numpy as np

from ..const import ENV_THREADS

_LOGGER = logging.getLogger(__name__)

TK = TypeVar("TK")
TV = TypeVar("TV")

SeedLike = Union[int, Sequence[int]]


def worker_count() -> int:
    """Worker threads for FFT kernels and per-clip fan-out (1 = determinism mode)."""
    raw = os.environ.get(ENV_THREADS, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        _LOGGER.warning("Ignoring %s=%r, expected an integer", ENV_THREADS, raw)
        return 1


def derive_rng(*keys: int) -> np.random.Generator:
    """Independent generator for a (master seed, index, ...) key."""
    return np.random.default_rng([int(k) for k in keys])


def as_seed_sequence(seed: SeedLike) -> List[int]:
    if isinstance(seed, (int, np.integer)):
        return [int(seed)]
    return [int(s) for s in seed]


def stable_hash(value: Any) -> str:
    payload = json.dumps(value, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


async def gather_ordered(
    func: Callable[[TK], TV], items: Sequence[TK], *, workers: int = 1
) -> List[TV]:
    """Run ``func`` over ``items`` in an executor, results in input order."""
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    loop = asyncio.get_running_loop()
    with ThreadPoolExecutor(max_workers=workers) as executor:
        tasks = asyncio.gather(
            *[loop.run_in_executor(executor, func, item) for item in items]
        )
        return list(await tasks)


def run_ordered(
    func: Callable[[TK], TV], items: Sequence[TK], *, workers: int = 1
) -> List[TV]:
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    return asyncio.run(gather_ordered(func, items, workers=workers))
