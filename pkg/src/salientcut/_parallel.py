"""Bounded worker pool used by the tile-parallel image stages.

Work is always split into the same fixed row tiles, whatever the worker
count, so every result is bitwise identical for 1 or N workers.
"""
from __future__ import annotations

import os
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, TypeVar

T = TypeVar("T")

TILE_ROWS = 32
ENV_VAR = "SALIENTCUT_THREADS"

_lock = threading.Lock()
_workers: int | None = None
_pool: ThreadPoolExecutor | None = None


def get_workers() -> int:
    global _workers
    if _workers is None:
        env = os.environ.get(ENV_VAR, "")
        try:
            _workers = max(1, int(env)) if env else 1
        except ValueError:
            _workers = 1
    return _workers


def set_workers(n: int) -> None:
    """Resize the pool. Takes effect for subsequent calls."""
    global _workers, _pool
    if n < 1:
        raise ValueError(f"worker count must be >= 1, got {n}")
    with _lock:
        if _pool is not None:
            _pool.shutdown(wait=True)
            _pool = None
        _workers = int(n)


def _get_pool() -> ThreadPoolExecutor:
    global _pool
    with _lock:
        if _pool is None:
            _pool = ThreadPoolExecutor(max_workers=get_workers(),
                                       thread_name_prefix="salientcut")
        return _pool


def row_tiles(height: int, tile: int = TILE_ROWS) -> list[tuple[int, int]]:
    return [(r, min(r + tile, height)) for r in range(0, height, tile)]


def _inline() -> bool:
    # nested calls from a pool thread run serially instead of waiting on the pool
    return get_workers() <= 1 or threading.current_thread().name.startswith("salientcut")


def run_tiles(fn: Callable[[int, int], T], height: int,
              tile: int = TILE_ROWS) -> list[T]:
    """Apply ``fn(row_start, row_stop)`` to every tile, results in tile order."""
    tiles = row_tiles(height, tile)
    if len(tiles) <= 1 or _inline():
        return [fn(a, b) for a, b in tiles]
    return list(_get_pool().map(lambda t: fn(*t), tiles))


def run_tasks(*fns: Callable[[], T]) -> list[T]:
    """Call independent thunks, concurrently when workers allow; results in order."""
    if len(fns) <= 1 or _inline():
        return [f() for f in fns]
    return list(_get_pool().map(lambda f: f(), fns))
