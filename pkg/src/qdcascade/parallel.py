"""Deterministic block-parallel execution and keyed random substreams."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import ConfigurationError

THREADS_ENV = "QDCASCADE_THREADS"
BLOCK_CYCLES = 1 << 15


def thread_count(threads: int | None = None) -> int:
    """Explicit count, else the QDCASCADE_THREADS environment variable, else 1."""
    if threads is None:
        raw = os.environ.get(THREADS_ENV, "").strip()
        if not raw:
            return 1
        try:
            threads = int(raw)
        except ValueError:
            raise ConfigurationError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if threads < 1:
        raise ConfigurationError("thread count must be >= 1")
    return threads


def substream(seed: int, tag: int, index: int = 0) -> np.random.Generator:
    """Generator keyed by (seed, stream tag, index); independent of scheduling."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), tag, index]))


def blocks(n: int, size: int = BLOCK_CYCLES):
    """[(block_index, start, stop), ...] covering range(n)."""
    return [(i, s, min(s + size, n)) for i, s in enumerate(range(0, n, size))]


def map_ordered(fn, items, threads: int | None = None):
    """fn over items, results in input order, optionally on a thread pool."""
    items = list(items)
    nt = min(thread_count(threads), max(1, len(items)))
    if nt == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=nt) as pool:
        return list(pool.map(fn, items))
