"""Counter-based random substreams and a deterministic parallel map.

Every random draw is taken from a Philox stream addressed by a tuple of
non-negative integer keys (for example trajectory id, side and step), so the
numbers a trajectory sees do not depend on evaluation order or thread count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence, TypeVar

import numpy as np

from kickmix.errors import ConfigurationError

T = TypeVar("T")

CHUNK = 64


def substream(seed: int, *keys: int) -> np.random.Generator:
    """Independent generator for ``(seed, *keys)``."""
    if seed < 0 or any(k < 0 for k in keys):
        raise ConfigurationError(f"seed and keys must be non-negative, got {seed}, {keys}")
    seq = np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(seq))


def chunks(n: int, size: int = CHUNK) -> list[range]:
    """Fixed partition of ``range(n)``; independent of the worker count."""
    return [range(i, min(i + size, n)) for i in range(0, n, size)]


def parallel_map(fn: Callable[[range], T], n: int, threads: int = 1, size: int = CHUNK) -> list[T]:
    """Apply ``fn`` to each chunk of ``range(n)`` and return results in chunk order."""
    if threads < 1:
        raise ConfigurationError(f"threads must be >= 1, got {threads}")
    parts = chunks(n, size)
    if threads == 1 or len(parts) <= 1:
        return [fn(p) for p in parts]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, parts))


def uniform_rows(seed: int, ids: Sequence[int], *keys: int, size: int) -> np.ndarray:
    """One row of ``size`` uniforms per id, row ``i`` drawn from ``substream(seed, ids[i], *keys)``."""
    out = np.empty((len(ids), size))
    for row, i in enumerate(ids):
        out[row] = substream(seed, int(i), *keys).random(size)
    return out
