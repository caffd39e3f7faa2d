"""Deterministic chunked evaluation over point arrays."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

CHUNK = 8192


def chunked_map(fn, X, workers: int = 1, chunk: int = CHUNK) -> list:
    """Apply fn to fixed-size row chunks of X and return results in order.

    Chunk boundaries do not depend on ``workers``, so any reduction over
    the returned list is bit-stable.  Threads are used because the work is
    numpy-bound and the callables are often closures.
    """
    X = np.asarray(X)
    pieces = [X[i : i + chunk] for i in range(0, len(X), chunk)] or [X]
    if workers <= 1 or len(pieces) == 1:
        return [fn(p) for p in pieces]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, pieces))
