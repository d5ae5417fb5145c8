"""Context-local worker count and deterministic block mapping.

The worker count lives in a ContextVar so concurrent callers (threads or
tasks) can run with different settings without touching global state.
Work is always split into contiguous blocks whose outputs land in disjoint
slices, so results do not depend on how many workers ran.
"""

from __future__ import annotations

import os
from collections.abc import Callable, Iterator
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from contextvars import ContextVar

from .exceptions import ConfigError

__all__ = ["worker_scope", "get_worker_count", "set_worker_count", "run_blocks"]

# Module-level state, not class state
_workers: ContextVar[int] = ContextVar("regx_workers", default=1)


def _check(count: int) -> int:
    if count == 0:
        return os.cpu_count() or 1
    if count < 0:
        raise ConfigError("threads", f"must be >= 0, got {count}")
    return count


@contextmanager
def worker_scope(count: int) -> Iterator[int]:
    """Run the enclosed block with ``count`` workers (0 means one per CPU).

    Yields:
        The effective worker count
    """
    token = _workers.set(_check(count))
    try:
        yield _workers.get()
    finally:
        _workers.reset(token)


def set_worker_count(count: int) -> None:
    """Set the worker count for the current context."""
    _workers.set(_check(count))


def get_worker_count() -> int:
    """Worker count for the current context (default 1)."""
    return _workers.get()


def _blocks(total: int, parts: int) -> list[range]:
    parts = max(1, min(parts, total))
    edges = [total * i // parts for i in range(parts + 1)]
    return [range(edges[i], edges[i + 1]) for i in range(parts) if edges[i] < edges[i + 1]]


def run_blocks(total: int, work: Callable[[range], None]) -> None:
    """Call ``work`` on contiguous index blocks covering ``range(total)``.

    ``work`` must write only to the slice named by its block.
    """
    workers = get_worker_count()
    blocks = _blocks(total, workers)
    if workers == 1 or len(blocks) <= 1:
        for block in blocks:
            work(block)
        return
    with ThreadPoolExecutor(max_workers=workers) as executor:
        for future in [executor.submit(work, block) for block in blocks]:
            future.result()
