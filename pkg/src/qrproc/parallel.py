"""Order-preserving fan-out of replicate tasks over worker processes.

Every replicate draws from its own seeded stream, so results do not depend
on how replicates are split across workers.
"""

from __future__ import annotations

import multiprocessing as mp
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable

import numpy as np

from .errors import DomainError

WORKERS_ENV = "QRPROC_WORKERS"


def resolve_workers(workers: int | None) -> int:
    """Explicit count, else $QRPROC_WORKERS, else 1."""
    if workers is None:
        raw = os.environ.get(WORKERS_ENV, "").strip()
        try:
            workers = int(raw) if raw else 1
        except ValueError:
            raise DomainError(f"{WORKERS_ENV}={raw!r} is not an integer") from None
    if workers < 1:
        raise DomainError("workers must be >= 1")
    return workers


def chunks(total: int, parts: int) -> list[range]:
    edges = np.linspace(0, total, parts + 1).round().astype(int)
    return [range(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def map_replicates(task: Callable, args: tuple, total: int, workers: int | None) -> list:
    """task(args, replicate_range) -> list of per-replicate results, concatenated in index order."""
    w = min(resolve_workers(workers), max(total, 1))
    if w == 1:
        return task(args, range(total))
    ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
    with ProcessPoolExecutor(max_workers=w, mp_context=ctx) as pool:
        parts = list(pool.map(task, [args] * w, chunks(total, w)))
    return [item for part in parts for item in part]
