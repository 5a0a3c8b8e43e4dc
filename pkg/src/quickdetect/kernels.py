"""Backend selection for the hot loops.

The compiled extension is used when it imports; setting
``QUICKDETECT_PURE_PYTHON=1`` forces the numpy/scipy fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pycore

BACKEND = "python"
_impl = _pycore

if not os.environ.get("QUICKDETECT_PURE_PYTHON"):
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on the build
        _impl = _pycore

interp_multilinear = _impl.interp_multilinear
node_terms = _impl.node_terms
piecewise_root = _impl.piecewise_root
sample_sums = _impl.sample_sums
detect_boundary = _impl.detect_boundary
detect_thresholds = _impl.detect_thresholds


def backend(name: str):
    """Module implementing the kernels for ``name`` in {"cython", "python"}."""
    if name == "python":
        return _pycore
    if name == "cython":
        from . import _core

        return _core
    raise ValueError(f"unknown backend {name!r}")


def pack_axes(axes):
    """Flatten a list of 1-d axes into (flat, offsets, lengths) for the kernels."""
    lengths = np.array([len(a) for a in axes], dtype=np.intp)
    offsets = np.zeros(len(axes), dtype=np.intp)
    if len(axes):
        offsets[1:] = np.cumsum(lengths)[:-1]
        flat = np.ascontiguousarray(np.concatenate([np.asarray(a, dtype=float) for a in axes]))
    else:
        flat = np.zeros(0)
    return flat, offsets, lengths


def family_members(family):
    """Padded (N, max k) member table and sizes for the detection kernels."""
    sizes = np.array([len(s) for s in family.subsets], dtype=np.intp)
    members = np.zeros((family.N, int(sizes.max())), dtype=np.intp)
    for i, s in enumerate(family.subsets):
        members[i, : len(s)] = [m - 1 for m in s]
    return members, sizes
