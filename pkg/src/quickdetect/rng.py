"""Per-path random streams.

Each path owns a Philox stream keyed by ``(seed_root, stream, path)``.  Draws
inside a path are taken step-major, coordinate-minor, so the value used for
(path, step, coordinate) never depends on how paths are batched or ordered.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1

# stream tags keep unrelated uses of one seed apart
STREAM_PATHS = 0
STREAM_KERNEL = 1
STREAM_RESIDUAL = 2
STREAM_SCENARIO = 3
STREAM_POLICY = 4


def path_generator(seed_root: int, path: int, stream: int = STREAM_PATHS) -> np.random.Generator:
    key = np.array([seed_root & MASK64, ((stream & 0xFFFF) << 48) | (path & ((1 << 48) - 1))], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def normals(seed_root: int, paths, steps: int, dim: int, stream: int = STREAM_PATHS) -> np.ndarray:
    """Standard normals of shape ``(len(paths), steps, dim)``."""
    paths = list(paths)
    out = np.empty((len(paths), steps, dim))
    for row, p in enumerate(paths):
        path_generator(seed_root, p, stream).standard_normal((steps, dim), out=out[row])
    return out


def path_blocks(n_paths: int, block: int):
    for start in range(0, n_paths, block):
        yield range(start, min(n_paths, start + block))
