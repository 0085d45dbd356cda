"""Deterministic random substreams.

Chains are grouped into fixed-size blocks. Each block owns a Philox stream
keyed by ``(seed, purpose, block)`` and consumes it in step order, so results
depend only on the seed and the chain count, never on how many workers run.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

BLOCK_SIZE = 1024

# purpose tags for spawn keys
CHAIN = 0
INIT = 1
REFERENCE = 2
PROJECTIONS = 3
BOOTSTRAP = 4
PAIRS = 5
LEMMA = 6

T = TypeVar("T")


def substream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def blocks(n: int, block_size: int = BLOCK_SIZE) -> list[slice]:
    return [slice(s, min(s + block_size, n)) for s in range(0, n, block_size)]


def default_threads() -> int:
    return os.cpu_count() or 1


def map_ordered(fn: Callable[[int], T], count: int, threads: int | None = None) -> list[T]:
    """Evaluate ``fn(0..count-1)`` possibly concurrently; results in index order."""
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or count <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=min(threads, count)) as pool:
        return list(pool.map(fn, range(count)))


def stack_blocks(parts: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate(parts, axis=0) if len(parts) > 1 else parts[0]


def derive_seed(seed: int, *key: int) -> int:
    """A 63-bit integer seed for an independent child stream."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))
