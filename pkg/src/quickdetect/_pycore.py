"""Pure numpy/scipy versions of the compiled kernels, same signatures and semantics."""

from __future__ import annotations

import numpy as np
from scipy.interpolate import RegularGridInterpolator


def _split_axes(axes, offsets, lengths):
    return [np.asarray(axes[o:o + m]) for o, m in zip(offsets, lengths)]


def interp_multilinear(axes, offsets, lengths, values, points):
    points = np.asarray(points, dtype=float)
    n, d = points.shape
    if d == 0:
        return np.full(n, float(values[0]))
    grid = _split_axes(axes, offsets, lengths)
    vals = np.asarray(values, dtype=float).reshape([len(a) for a in grid])
    top = np.array([a[-1] for a in grid])
    low = np.array([a[0] for a in grid])
    outside = np.any(points > top, axis=1)
    f = RegularGridInterpolator(grid, vals, method="linear", bounds_error=False, fill_value=0.0)
    out = f(np.clip(points, low, top))
    out[outside] = 0.0
    return out


def node_terms(A, B, wq, p, lam_c, axes, offsets, lengths, values, node, bj, shift, g, r, al, be):
    A = np.asarray(A)
    B = np.asarray(B)
    Q, S, N = A.shape
    d = N - 1
    p = np.asarray(p)
    X = A[:, :, :d] * np.asarray(node)[None, None, :] + B[:, :, :d]
    lin = X @ p[:d]
    if d:
        top = np.array([axes[o + m - 1] for o, m in zip(offsets, lengths)])
        inside = np.all(X <= top, axis=2)
        t0 = interp_multilinear(axes, offsets, lengths, values, X.reshape(-1, d)).reshape(Q, S)
        t0 = np.where(inside, t0, 0.0)
        h = np.where(inside, shift, 0.0)
    else:
        t0 = np.full((Q, S), float(values[0]))
        h = np.full((Q, S), float(shift))
    aN, bN = A[:, :, d], B[:, :, d]
    w = np.asarray(wq)[:, None]
    g[...] = aN - h
    r[...] = t0 - h * bj - bN
    al[...] = w * (lin + p[d] * bN - lam_c)
    be[...] = w * p[d] * aN


def piecewise_root(g, r, al, be, lo, hi):
    n_samples = np.asarray(g).shape[1]
    g, r, al, be = (np.asarray(a).ravel() for a in (g, r, al, be))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(g != 0, r / np.where(g != 0, g, 1.0), 0.0)
    pos, neg, zero = g > 0, g < 0, g == 0
    always = (pos & (z >= hi)) | (neg & (z <= lo)) | (zero & (r > 0))
    live_up = pos & (z > lo) & (z < hi)
    live_dn = neg & (z > lo) & (z < hi)
    c0 = al[always].sum()
    c1 = be[always].sum()
    live = live_up | live_dn
    order = np.argsort(z[live], kind="stable")
    zl = z[live][order]
    sign = np.where(live_up[live], -1.0, 1.0)[order]
    a_l = al[live][order]
    b_l = be[live][order]
    s0 = a_l[sign < 0].sum()
    s1 = b_l[sign < 0].sum()
    # interval k is [y_k, y_{k+1}) with y_0 = lo; sums change after each breakpoint
    ys = np.concatenate([[lo], zl, [hi]])
    s0s = s0 + np.concatenate([[0.0], np.cumsum(sign * a_l)])
    s1s = s1 + np.concatenate([[0.0], np.cumsum(sign * b_l)])
    f0 = c0 + s0s + (c1 + s1s) * ys[:-1]
    f1 = c0 + s0s + (c1 + s1s) * ys[1:]
    f_lo = f0[0]
    f_hi = f1[-1]
    if f_lo >= 0:
        return lo, -1, f_lo / n_samples, f_hi / n_samples
    hit = np.nonzero((f0 >= 0) | (f1 >= 0))[0]
    if not len(hit):
        return hi, 1, f_lo / n_samples, f_hi / n_samples
    k = hit[0]
    if f0[k] >= 0:
        root = ys[k]
    else:
        root = ys[k] + (ys[k + 1] - ys[k]) * (-f0[k]) / (f1[k] - f0[k])
    return float(root), 0, f_lo / n_samples, f_hi / n_samples


def sample_sums(g, r, al, be, y):
    g, r, al, be = (np.asarray(a) for a in (g, r, al, be))
    active = g * y < r
    return np.where(active, al + be * y, 0.0).sum(axis=0)


def _flow(dX, dts, members, sizes, mu, growth, lam, phi0):
    """Generator of Phi after each step, vectorised over paths."""
    P, T, n = dX.shape
    N = len(sizes)
    inc = np.zeros((n, N))
    for i in range(N):
        inc[members[i, :sizes[i]], i] = 1.0
    logE = np.zeros((P, N))
    inv = np.ones((P, N))
    integ = np.zeros((P, N))
    for j in range(T):
        logE += mu * (dX[:, j, :] @ inc) + np.asarray(growth) * dts[j]
        inv_new = np.exp(-logE)
        integ += 0.5 * (inv + inv_new) * dts[j]
        inv = inv_new
        yield (np.asarray(phi0) + lam * integ) / inv_new


def detect_boundary(dX, dts, members, sizes, mu, growth, lam, phi0, axes, offsets, lengths, values):
    dX = np.asarray(dX)
    P = dX.shape[0]
    d = len(sizes) - 1
    out = np.full(P, -1, dtype=np.intp)
    phi = np.broadcast_to(np.asarray(phi0, dtype=float), (P, d + 1))
    hit = phi[:, d] >= interp_multilinear(axes, offsets, lengths, values, phi[:, :d])
    out[hit] = 0
    for j, phi in enumerate(_flow(dX, dts, members, sizes, mu, growth, lam, phi0)):
        todo = out < 0
        if not todo.any():
            break
        bvals = interp_multilinear(axes, offsets, lengths, values, phi[todo, :d])
        idx = np.nonzero(todo)[0][phi[todo, d] >= bvals]
        out[idx] = j + 1
    return out


def detect_thresholds(dX, dts, members, sizes, mu, growth, lam, phi0, p, thresholds):
    dX = np.asarray(dX)
    P = dX.shape[0]
    thresholds = np.asarray(thresholds)
    out = np.full((P, len(thresholds)), -1, dtype=np.intp)
    stat = np.full(P, float(np.dot(p, phi0)))
    out[(stat[:, None] >= thresholds[None, :])] = 0
    for j, phi in enumerate(_flow(dX, dts, members, sizes, mu, growth, lam, phi0)):
        if (out >= 0).all():
            break
        stat = phi @ np.asarray(p)
        new = (stat[:, None] >= thresholds[None, :]) & (out < 0)
        out[new] = j + 1
    return out
