"""Optional thread fan-out for embarrassingly parallel row blocks.

The LATENT_ATLAS_THREADS environment variable caps internal parallelism;
unset or 1 means serial. Work is split into contiguous chunks whose results
are reassembled in input order, so the output is identical either way.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

ENV_THREADS = "LATENT_ATLAS_THREADS"


def thread_cap() -> int:
    raw = os.environ.get(ENV_THREADS, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def map_row_blocks(fn, X: np.ndarray, min_chunk: int = 64) -> np.ndarray:
    """Apply ``fn`` to contiguous row blocks of X and vstack the results."""
    threads = thread_cap()
    n = X.shape[0]
    if threads == 1 or n <= min_chunk:
        return fn(X)
    bounds = np.linspace(0, n, threads + 1, dtype=int)
    chunks = [X[a:b] for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return np.vstack(list(pool.map(fn, chunks)))
