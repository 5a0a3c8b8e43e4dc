"""Boundary solver: Picard iteration on the Fredholm equation with Monte Carlo kernels.

Under the no-change law the flow is affine in its start point,
``Phi_t = A_t * phi + B_t`` coordinate-wise, so one block of sampled
``(A_t, B_t)`` at the quadrature times serves every node, every trial value
and every sweep (common random numbers).  At a fixed node the integrand is
``(al + be * y) * 1{g * y < r}`` per sample, a piecewise linear function of
the trial value ``y``; its first up-crossing of zero is found exactly.

Plain substitution with a frozen surface stalls: at the true surface the
map ``y -> lhs(y)`` is flat to first order (smooth fit), so the frozen root
is not locally unique.  Each node is instead solved with the in-box surface
shifted by ``y - b_j``, which makes the node equation self-consistent and
turns the sweep into a contraction.  A fixed point of the shifted sweep is a
fixed point of the literal equation, since the shift vanishes there.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import threading
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.optimize import brentq, isotonic_regression

from . import kernels, rng
from .kernel import BoundPlanes, bound_surfaces, phi_star_all
from .simulate import flow_coefficients


class ConvergenceWarning(UserWarning):
    pass


# time quadrature ---------------------------------------------------------------


@dataclass(frozen=True)
class TimeQuadrature:
    times: np.ndarray
    weights: np.ndarray  # Gauss weights times e^{-lam t}
    tmax: float
    panels: int
    points: int


def tail_horizon(spec, phi_star, eps_rel: float = 1e-4) -> float:
    """Horizon with e^{-lam T} Lmax / lam below eps_rel * lam / c."""
    lam_c = spec.lam / spec.c
    lmax = max(lam_c, float(np.max(spec.p * np.asarray(phi_star))) - lam_c)
    return math.log(lmax / (spec.lam * eps_rel * lam_c)) / spec.lam


def time_quadrature(spec, phi_star=None, panels: int = 12, points: int = 8,
                    ratio: float = 1.35, eps_rel: float = 1e-4) -> TimeQuadrature:
    """Composite Gauss-Legendre rule on geometrically growing panels over [0, T]."""
    if phi_star is None:
        phi_star = phi_star_all(spec)
    tmax = tail_horizon(spec, phi_star, eps_rel)
    k = np.arange(panels + 1)
    edges = tmax * (ratio**k - 1.0) / (ratio**panels - 1.0)
    x, w = leggauss(points)
    width = np.diff(edges)[:, None]
    t = (edges[:-1, None] + width * (x + 1.0) / 2.0).ravel()
    wt = (width * w / 2.0).ravel() * np.exp(-spec.lam * t)
    return TimeQuadrature(t, wt, tmax, panels, points)


@dataclass
class KernelBlock:
    """Frozen flow coefficients at the quadrature times for one sample block."""

    quad: TimeQuadrature
    A: np.ndarray = field(repr=False)  # (Q, S, N)
    B: np.ndarray = field(repr=False)
    seed: int
    stream: int
    dt: float

    @property
    def n_samples(self) -> int:
        return self.A.shape[1]


def kernel_block(spec, n_samples: int, seed: int, quad: Optional[TimeQuadrature] = None,
                 stream: int = rng.STREAM_KERNEL, dt: float = 1e-2) -> KernelBlock:
    if quad is None:
        quad = time_quadrature(spec)
    A, B = flow_coefficients(spec, quad.times, n_samples, seed, dt=dt, stream=stream)
    return KernelBlock(quad, A, B, seed, stream, dt)


# boundary grid -----------------------------------------------------------------


def chebyshev_axis(length: float, m: int) -> np.ndarray:
    """``m`` nodes on [0, length], dense near 0."""
    if m < 2:
        raise ValueError("need at least two nodes per axis")
    x = length * (1.0 - np.cos(np.pi * np.arange(m) / (2.0 * (m - 1))))
    x[0] = 0.0
    x[-1] = length
    return x


@dataclass
class BoundaryGrid:
    """Tabulated surface b over the first N-1 coordinates.

    ``values`` has one entry per node in C order over ``axes``.  Beyond the
    top of any axis the surface is 0 (that region lies past the stopping
    polytope); below the grid nothing exists since the state is >= 0.

    Interpolation runs on :attr:`kernel_values` so the zero level is located
    inside its cell rather than at a node.  A solved grid keeps the signed
    node roots in ``signed`` (``values`` is their positive part); otherwise
    nodes with b = 0 carry the linear continuation of the positive part
    (see :func:`zero_extension`).
    """

    axes: tuple
    values: np.ndarray
    spec_digest: str = ""
    iterations: int = 0
    n_samples: int = 0
    residual: Optional[np.ndarray] = None
    stderr: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)
    signed: Optional[np.ndarray] = None

    def __post_init__(self):
        self.axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        self.values = np.ascontiguousarray(np.asarray(self.values, dtype=float).ravel())
        if self.values.size != int(np.prod(self.shape)):
            raise ValueError("values do not match the grid shape")
        self._packed = kernels.pack_axes(self.axes)
        self._kernel_values = None
        if self.signed is not None:
            self.signed = np.ascontiguousarray(np.asarray(self.signed, dtype=float).ravel())
            if self.signed.shape != self.values.shape:
                raise ValueError("signed values do not match the grid shape")
            self._kernel_values = self.signed

    @property
    def kernel_values(self) -> np.ndarray:
        if self._kernel_values is None:
            ext = zero_extension(self.grid_values(), self.axes) if self.dim else self.values
            self._kernel_values = np.ascontiguousarray(ext.ravel(), dtype=float)
        return self._kernel_values

    @property
    def dim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(len(a) for a in self.axes)

    @property
    def packed(self):
        return self._packed

    def nodes(self) -> np.ndarray:
        if not self.axes:
            return np.zeros((1, 0))
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=-1)

    def grid_values(self) -> np.ndarray:
        return self.values.reshape(self.shape)

    def with_values(self, values) -> "BoundaryGrid":
        return BoundaryGrid(self.axes, values, self.spec_digest, self.iterations, self.n_samples,
                            None, None, dict(self.meta))

    def with_signed(self, signed) -> "BoundaryGrid":
        """Grid whose surface is the positive part of the signed node values."""
        signed = np.asarray(signed, dtype=float)
        return BoundaryGrid(self.axes, np.maximum(signed, 0.0), self.spec_digest, self.iterations,
                            self.n_samples, None, None, dict(self.meta), signed)

    def __call__(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.dim:
            raise ValueError(f"expected points with {self.dim} coordinates")
        flat, off, ln = self._packed
        out = kernels.interp_multilinear(flat, off, ln, self.kernel_values, np.ascontiguousarray(points))
        return np.maximum(out, 0.0)

    def digest(self) -> str:
        return hashlib.sha256(self.to_csv().encode()).hexdigest()

    # files ------------------------------------------------------------------

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for i, ax in enumerate(self.axes, 1):
            w.writerow([f"#axis_{i}"] + [_fmt(x) for x in ax])
        cols = [f"phi_{i}" for i in range(1, self.dim + 1)] + ["b", "residual", "stderr"]
        w.writerow(cols)
        res = self.residual if self.residual is not None else np.full(self.values.size, np.nan)
        se = self.stderr if self.stderr is not None else np.full(self.values.size, np.nan)
        for node, b, r, s in zip(self.nodes(), self.values, res, se):
            w.writerow([_fmt(x) for x in node] + [_fmt(b), _fmt(r), _fmt(s)])
        return buf.getvalue()

    def save(self, path) -> tuple[str, str]:
        """Write the CSV and its JSON sidecar; returns both paths."""
        path = str(path)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())
        side = path + ".json"
        meta = dict(self.meta)
        meta.update(spec_digest=self.spec_digest, iterations=self.iterations, n_samples=self.n_samples)
        if self.signed is not None:
            meta["signed"] = [float(x) for x in self.signed]
        with open(side, "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
        return path, side

    @classmethod
    def load(cls, path) -> "BoundaryGrid":
        axes, rows, header = [], [], None
        with open(path, encoding="utf-8", newline="") as fh:
            for row in csv.reader(fh):
                if not row:
                    continue
                if row[0].startswith("#axis_"):
                    axes.append([float(x) for x in row[1:]])
                elif header is None:
                    header = row
                else:
                    rows.append([float(x) for x in row])
        if header is None or "b" not in header:
            raise ValueError(f"{path}: not a boundary grid file")
        data = np.array(rows, dtype=float).reshape(-1, len(header))
        meta = {}
        try:
            with open(str(path) + ".json", encoding="utf-8") as fh:
                meta = json.load(fh)
        except FileNotFoundError:
            pass
        col = header.index("b")
        signed = meta.pop("signed", None)
        grid = cls(axes, data[:, col], meta.get("spec_digest", ""), meta.get("iterations", 0),
                   meta.get("n_samples", 0), data[:, col + 1], data[:, col + 2], meta, signed)
        return grid


def zero_extension(values: np.ndarray, axes) -> np.ndarray:
    """Continue a nonincreasing surface linearly below zero.

    Along each axis line the zeros form a tail; it is overwritten with the
    line through the last two positive nodes, capped at 0.  A node reached
    from several axes keeps the largest estimate; nodes with no positive pair
    behind them stay 0.
    """
    v = np.asarray(values, dtype=float)
    best = np.full(v.shape, -np.inf)
    for ax, x in enumerate(axes):
        lines = np.moveaxis(v, ax, -1).reshape(-1, v.shape[ax])
        est = np.full(lines.shape, -np.inf)
        for row, line in enumerate(lines):
            pos = np.flatnonzero(line > 0)
            z = pos[-1] + 1 if len(pos) else 0
            if z < 2 or z == len(line):
                continue
            slope = (line[z - 1] - line[z - 2]) / (x[z - 1] - x[z - 2])
            est[row, z:] = np.minimum(line[z - 1] + slope * (x[z:] - x[z - 1]), 0.0)
        est = np.moveaxis(est.reshape(np.moveaxis(v, ax, -1).shape), -1, ax)
        best = np.maximum(best, est)
    out = v.copy()
    zero = (v <= 0) & np.isfinite(best)
    out[zero] = best[zero]
    return out


def crossing_extension(spec, block: "KernelBlock", b: BoundaryGrid) -> np.ndarray:
    """Kernel values for ``b`` whose zero level sits where the equation puts it.

    On every axis line that runs from positive nodes into zeros, the point
    where the shifted node equation at y = 0 changes sign is located.  The
    search starts on the segment between the last positive node and the
    first zero and walks outward when both ends agree in sign, so the
    crossing may lie a few cells either way of the current zero node.  The
    zero nodes then get the line through the crossing and the interpolated
    surface one local grid spacing behind it, capped at 0.  Anchoring at a
    fixed distance rather than at the last positive node keeps the result
    continuous as nodes cross zero, which the plain :func:`zero_extension`
    is not.  Nodes reached from several axes keep the largest value; lines
    without a sign change fall back on :func:`zero_extension`.
    """
    if b.dim == 0:
        return b.values.copy()
    v = b.grid_values()
    fallback = zero_extension(v, b.axes)
    best = np.full(v.shape, -np.inf)
    nodes = b.nodes().reshape(v.shape + (b.dim,))

    def shifted_at_zero(point):
        bj = float(kernels.interp_multilinear(*b.packed, b.kernel_values, point[None, :])[0])
        return float(kernels.sample_sums(*_terms(spec, block, b, point, bj, 1.0), 0.0).mean())

    for ax, x in enumerate(b.axes):
        lines = np.moveaxis(v, ax, -1)
        pts = np.moveaxis(nodes, ax, -2)
        est = np.full(lines.shape, -np.inf)
        mid, width = 0.5 * (x[1:] + x[:-1]), np.diff(x)
        for idx in np.ndindex(lines.shape[:-1]):
            line = lines[idx]
            pos = np.flatnonzero(line > 0)
            z = pos[-1] + 1 if len(pos) else 0
            if z == 0 or z == len(line):
                continue
            base = pts[idx][z]
            cache = {}

            def g(t):
                if t not in cache:
                    q = base.copy()
                    q[ax] = t
                    cache[t] = shifted_at_zero(q)
                return cache[t]

            k = z - 1
            if g(x[k]) >= 0:
                while k > 0 and g(x[k]) >= 0:
                    k -= 1
                ok = g(x[k]) < 0
            else:
                while k + 1 < len(x) - 1 and g(x[k + 1]) < 0:
                    k += 1
                ok = g(x[k + 1]) >= 0
            if not ok:
                est[idx][z:] = np.moveaxis(fallback, ax, -1)[idx][z:]
                continue
            a, c = x[k], x[k + 1]
            xc = brentq(g, a, c, xtol=1e-6 * (c - a))
            back = max(xc - float(np.interp(xc, mid, width)), x[0])
            rise = float(np.interp(back, x, line))
            est[idx][z:] = np.minimum(rise * (xc - x[z:]) / (xc - back), 0.0)
        best = np.maximum(best, np.moveaxis(est, -1, ax))
    out = v.copy()
    zero = (v <= 0) & np.isfinite(best)
    out[zero] = best[zero]
    return np.ascontiguousarray(out.ravel())


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(type(o).__name__)


def default_axes(spec, phi_star, nodes: int = 21, margin: float = 1.05) -> tuple:
    return tuple(chebyshev_axis(margin * phi_star[i], nodes) for i in range(spec.N - 1))


def plane_grid(spec, axes, planes: Optional[BoundPlanes] = None, which: str = "upper") -> BoundaryGrid:
    """Grid holding the clamped lower or upper plane at its nodes."""
    if planes is None:
        planes = bound_surfaces(spec)
    proto = BoundaryGrid(axes, np.zeros(int(np.prod([len(a) for a in axes]))), spec.digest())
    vals = _plane_at(planes, proto.nodes(), which)
    return proto.with_values(vals)


def _plane_at(planes: BoundPlanes, nodes, which):
    if nodes.shape[1] == 0:
        x = planes.lower_intercept if which == "lower" else planes.upper_intercept
        return np.full(len(nodes), float(x))
    return np.asarray(planes.lower(nodes) if which == "lower" else planes.upper(nodes), dtype=float)


class _Buffers(threading.local):
    def get(self, shape):
        arr = getattr(self, "arr", None)
        if arr is None or arr[0].shape != shape:
            self.arr = [np.empty(shape) for _ in range(4)]
        return self.arr


_BUF = _Buffers()


def _terms(spec, block: KernelBlock, b: BoundaryGrid, node, bj: float, shift: float):
    g, r, al, be = _BUF.get(block.A.shape[:2])
    flat, off, ln = b.packed
    kernels.node_terms(block.A, block.B, block.quad.weights, spec.p, spec.lam / spec.c,
                       flat, off, ln, b.kernel_values, np.ascontiguousarray(node, dtype=float),
                       float(bj), float(shift), g, r, al, be)
    return g, r, al, be


def _check_grid(spec, b: BoundaryGrid):
    if b.dim != spec.N - 1:
        raise ValueError(f"boundary has {b.dim} axes but the family needs {spec.N - 1}")


def fredholm_samples(spec, b: BoundaryGrid, node, y: float, block: KernelBlock) -> np.ndarray:
    """Per-sample time integrals at ``(node, y)``; their mean is the left side."""
    _check_grid(spec, b)
    if y < 0:
        raise ValueError("y must be >= 0")
    terms = _terms(spec, block, b, node, 0.0, 0.0)
    return kernels.sample_sums(*terms, float(y))


def fredholm_lhs(spec, b: BoundaryGrid, node, y: float, block: KernelBlock):
    """Left side of the boundary equation at ``(node, y)``; returns (value, stderr)."""
    sums = fredholm_samples(spec, b, node, y, block)
    S = len(sums)
    return float(sums.mean()), float(sums.std(ddof=1) / math.sqrt(S)) if S > 1 else 0.0


def value_hat(spec, b: BoundaryGrid, phi, block: KernelBlock):
    """Value of the extended problem at ``phi``; returns (value, stderr)."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (spec.N,) or np.any(phi < 0):
        raise ValueError("phi must be a point of the non-negative orthant")
    return fredholm_lhs(spec, b, phi[:-1], phi[-1], block)


def value_initial(spec, b: BoundaryGrid, pi: float, block: KernelBlock):
    """Value of the original problem at prior ``pi``; returns (value, stderr)."""
    if not 0 <= pi <= 1:
        raise ValueError("pi must lie in [0, 1]")
    if pi == 1:
        return 0.0, 0.0
    phi = np.full(spec.N, pi / (1.0 - pi))
    v, se = value_hat(spec, b, phi, block)
    return (1.0 - pi) * (1.0 + spec.c * v), (1.0 - pi) * spec.c * se


def kernel_K(spec, b, t: float, phi, n_samples: int, seed: int, dt: float = 1e-2):
    """Monte Carlo estimate of E[L(Phi_t) 1{Phi_t in C}] from ``phi``; (estimate, stderr).

    ``b`` may be a BoundaryGrid, a callable on (M, N-1) points, or None for
    an indicator that is always 1.
    """
    phi = np.asarray(phi, dtype=float)
    if t < 0 or np.any(phi < 0):
        raise ValueError("need t >= 0 and phi >= 0")
    A, B = flow_coefficients(spec, [float(t)], n_samples, seed, dt=dt)
    X = A[0] * phi + B[0]
    L = X @ spec.p - spec.lam / spec.c
    if b is not None:
        L = np.where(X[:, -1] < b(X[:, :-1]), L, 0.0)
    se = float(L.std(ddof=1) / math.sqrt(len(L))) if len(L) > 1 else 0.0
    return float(L.mean()), se


# monotone projection -----------------------------------------------------------


def monotone_projection(values: np.ndarray, max_rounds: int = 100) -> np.ndarray:
    """Nonincreasing along every axis, by alternating per-axis isotonic fits."""
    v = np.array(values, dtype=float)
    if v.ndim == 0 or v.size <= 1:
        return v
    for _ in range(max_rounds):
        changed = False
        for ax in range(v.ndim):
            moved = np.moveaxis(v, ax, -1)
            flat = moved.reshape(-1, moved.shape[-1])
            for row in range(flat.shape[0]):
                if np.any(np.diff(flat[row]) > 0):
                    flat[row] = isotonic_regression(flat[row], increasing=False).x
                    changed = True
            v = np.moveaxis(flat.reshape(moved.shape), -1, ax)
        if not changed:
            break
    return np.ascontiguousarray(v)


def is_nonincreasing(values: np.ndarray) -> bool:
    v = np.asarray(values)
    return all(np.all(np.diff(v, axis=ax) <= 0) for ax in range(v.ndim))


# solver ------------------------------------------------------------------------


@dataclass
class SolveReport:
    iterations: int
    sup_change: list
    flagged: list  # per sweep: nodes whose root was clamped to a bracket end
    residual_max: float = float("nan")
    residual_mean: float = float("nan")
    stderr: float = float("nan")
    wall_time: float = 0.0
    converged: bool = False
    scheme: str = "shifted"
    damping: float = 1.0  # smallest per-node step weight reached
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def aitken(x, step, prev_step, q_max: float = 0.95):
    """Extrapolate nodes whose last two steps shrink geometrically with one sign.

    With ratio q = step / prev_step in (0, q_max] the remaining distance to
    the fixed point is about step * q / (1 - q).  Other nodes are left alone.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(np.abs(prev_step) > 1e-12, step / prev_step, 0.0)
    q = np.where((q > 0) & (q <= q_max), q, 0.0)
    return x + step * q / (1.0 - q)


def _sweep(spec, block, b: BoundaryGrid, nodes, lo, hi, workers: int):
    def solve(j):
        y, status, _, _ = kernels.piecewise_root(*_terms(spec, block, b, nodes[j], b.kernel_values[j], 1.0),
                                                 float(lo[j]), float(hi[j]))
        return y, status

    idx = range(len(nodes))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            out = list(pool.map(solve, idx))
    else:
        out = [solve(j) for j in idx]
    new = np.array([y for y, _ in out])
    flags = np.array([s for _, s in out])
    return new, flags


def picard_solve(spec, grid_nodes: int = 21, n_samples: int = 20000, tol: float = 1e-3,
                 seed: int = 0, max_sweeps: int = 60, dt: float = 1e-2, workers: int = 1,
                 block: Optional[KernelBlock] = None, axes=None, init: Optional[BoundaryGrid] = None,
                 callback=None, accelerate: bool = True, cycle_ratio: float = -0.5):
    """Solve for the boundary; returns (BoundaryGrid, SolveReport).

    Starts from the upper plane, sweeps every node against the frozen
    previous surface, projects onto nonincreasing surfaces and clips to the
    plane bracket.  A node whose update flips sign has its step weight
    halved, which breaks the two-cycles that Monte Carlo noise can cause.
    Stops when the sup-norm change of a damped sweep drops below ``tol``.
    With ``accelerate`` every third sweep is followed by a per-node Aitken
    extrapolation (see :func:`aitken`).
    """
    t_start = time.perf_counter()
    phi_star = phi_star_all(spec)
    planes = bound_surfaces(spec, phi_star)
    if block is None:
        block = kernel_block(spec, n_samples, seed, time_quadrature(spec, phi_star), dt=dt)
    if axes is None:
        axes = default_axes(spec, phi_star, grid_nodes)
    b = init if init is not None else plane_grid(spec, axes, planes, "upper")
    _check_grid(spec, b)
    nodes = b.nodes()
    lo = _plane_at(planes, nodes, "lower")
    hi = _plane_at(planes, nodes, "upper")
    b = b.with_values(np.clip(b.values, lo, hi))
    b = b.with_signed(crossing_extension(spec, block, b))
    report = SolveReport(0, [], [])
    prev_step = None
    weight = np.ones(len(nodes))

    def project(x):
        return np.clip(monotone_projection(x.reshape(b.shape)).ravel(), lo, hi)

    for sweep in range(1, max_sweeps + 1):
        new, flags = _sweep(spec, block, b, nodes, lo, hi, workers)
        step = project(new) - b.values
        if prev_step is not None:
            # a node that steps back most of the way it came is caught in a
            # two-cycle; one that keeps moving the same way earns its weight back
            with np.errstate(divide="ignore", invalid="ignore"):
                q = np.where(prev_step != 0, step / prev_step, 0.0)
            weight[q <= cycle_ratio] *= 0.5
            weight[q > 0] = np.minimum(2.0 * weight[q > 0], 1.0)
        step *= weight
        new = project(b.values + step)
        step = new - b.values
        change = float(np.max(np.abs(step)))
        if accelerate and prev_step is not None and sweep % 3 == 0 and change >= tol:
            new = project(aitken(new, step, prev_step))
        prev_step = step
        b = b.with_values(new)
        b = b.with_signed(crossing_extension(spec, block, b))
        report.damping = float(weight.min())
        report.iterations = sweep
        report.sup_change.append(change)
        report.flagged.append(int(np.count_nonzero(flags)))
        if callback is not None:
            callback(sweep, change, b)
        if change < tol:
            report.converged = True
            break
    tail = report.sup_change[-3:]
    if len(tail) == 3 and any(y > x for x, y in zip(tail, tail[1:])):
        report.warnings.append("sup change increased over the last three sweeps")
    if not report.converged:
        msg = f"no convergence after {max_sweeps} sweeps (last change {report.sup_change[-1]:.3g})"
        report.warnings.append(msg)
        warnings.warn(msg, ConvergenceWarning, stacklevel=2)
    report.wall_time = time.perf_counter() - t_start
    b.spec_digest = spec.digest()
    b.iterations = report.iterations
    b.n_samples = block.n_samples
    b.meta.update(seed=block.seed, dt=block.dt, tmax=block.quad.tmax, phi_star=phi_star.tolist(),
                  report=report.to_dict(), backend=kernels.BACKEND)
    return b, report


@dataclass
class ResidualSummary:
    residual: np.ndarray
    stderr: np.ndarray
    n_samples: int

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.residual)))

    @property
    def mean_abs(self) -> float:
        return float(np.mean(np.abs(self.residual)))

    @property
    def max_stderr(self) -> float:
        return float(np.max(self.stderr))

    def to_dict(self) -> dict:
        return {"max_abs": self.max_abs, "mean_abs": self.mean_abs, "max_stderr": self.max_stderr,
                "n_samples": self.n_samples}


def residual_report(spec, b: BoundaryGrid, n_samples: int = 20000, seed: int = 0,
                    block: Optional[KernelBlock] = None, dt: float = 1e-2) -> ResidualSummary:
    """Boundary-equation residual at every node, from a fresh sample block."""
    _check_grid(spec, b)
    if block is None:
        block = kernel_block(spec, n_samples, seed, stream=rng.STREAM_RESIDUAL, dt=dt)
    res, se = [], []
    for node, y in zip(b.nodes(), b.values):
        v, s = fredholm_lhs(spec, b, node, max(float(y), 0.0), block)
        res.append(v)
        se.append(s)
    out = ResidualSummary(np.array(res), np.array(se), block.n_samples)
    b.residual, b.stderr = out.residual, out.stderr
    return out


def boundary_stderr(spec, b: BoundaryGrid, block: KernelBlock, h: float = 0.02) -> np.ndarray:
    """Standard error of each node value of ``b``.

    The node value is the root in y of the shifted equation solved by each
    sweep.  Its stderr is the stderr of that equation at the root over the
    slope in y, both on common samples.  The unshifted equation is no use
    here: it is flat at the boundary.  Nodes clamped at zero get 0.
    """
    _check_grid(spec, b)
    out = np.zeros(b.values.size)
    for j, (node, y) in enumerate(zip(b.nodes(), b.values)):
        if y <= 0:
            continue
        terms = _terms(spec, block, b, node, float(y), 1.0)
        base = kernels.sample_sums(*terms, float(y))
        lo = max(float(y) - h, 0.0)
        slope = (kernels.sample_sums(*terms, float(y) + h) - kernels.sample_sums(*terms, lo)).mean() / (float(y) + h - lo)
        se = base.std(ddof=1) / math.sqrt(len(base))
        out[j] = se / abs(slope) if slope != 0 else math.inf
    return out
