# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: boundary interpolation, Fredholm node terms, detection scans."""

import numpy as np

from libc.math cimport exp, sqrt
from libc.stdlib cimport malloc, free, qsort

cdef enum:
    MAXDIM = 16
    LUTBINS = 512


cdef struct Grid:
    Py_ssize_t d
    const double* axes
    const Py_ssize_t* offsets
    const Py_ssize_t* lengths
    const double* values
    Py_ssize_t* lut  # d rows of LUTBINS + 1 starting cells
    double lo[MAXDIM]
    double hi[MAXDIM]
    double scale[MAXDIM]


cdef int _grid_init(Grid* G, const double[::1] axes, const Py_ssize_t[::1] offsets,
                    const Py_ssize_t[::1] lengths, const double[::1] values, Py_ssize_t d) except -1:
    cdef Py_ssize_t i, k, c, m
    cdef const double* ax
    cdef double x
    if d > MAXDIM:
        raise ValueError("too many dimensions")
    G.d = d
    G.values = &values[0]
    G.lut = NULL
    if d == 0:
        G.axes = NULL
        G.offsets = NULL
        G.lengths = NULL
        return 0
    G.axes = &axes[0]
    G.offsets = &offsets[0]
    G.lengths = &lengths[0]
    G.lut = <Py_ssize_t*>malloc(d * (LUTBINS + 1) * sizeof(Py_ssize_t))
    if G.lut == NULL:
        raise MemoryError()
    for i in range(d):
        m = lengths[i]
        if m < 2:
            free(G.lut)
            G.lut = NULL
            raise ValueError("every axis needs at least two nodes")
        ax = G.axes + offsets[i]
        G.lo[i] = ax[0]
        G.hi[i] = ax[m - 1]
        G.scale[i] = LUTBINS / (G.hi[i] - G.lo[i])
        c = 0
        for k in range(LUTBINS + 1):
            x = G.lo[i] + k / G.scale[i]
            while c < m - 2 and ax[c + 1] <= x:
                c += 1
            G.lut[i * (LUTBINS + 1) + k] = c
    return 0


cdef inline void _grid_free(Grid* G) noexcept nogil:
    if G.lut != NULL:
        free(G.lut)
        G.lut = NULL


cdef inline Py_ssize_t _cell(const Grid* G, Py_ssize_t i, double x) noexcept nogil:
    # cell c in [0, m-2] with ax[c] <= x < ax[c+1], x already inside [lo, hi]
    cdef Py_ssize_t k = <Py_ssize_t>((x - G.lo[i]) * G.scale[i])
    cdef Py_ssize_t m = G.lengths[i]
    cdef const double* ax = G.axes + G.offsets[i]
    cdef Py_ssize_t c
    if k > LUTBINS:
        k = LUTBINS
    elif k < 0:
        k = 0
    c = G.lut[i * (LUTBINS + 1) + k]
    while c < m - 2 and ax[c + 1] <= x:
        c += 1
    return c


cdef inline double _interp(const Grid* G, const double* x) noexcept nogil:
    """Multilinear interpolation; 0 above the top of any axis, clamped at the bottom."""
    cdef Py_ssize_t d = G.d, i, corner, flat, stride, c0, c1
    cdef Py_ssize_t cell[MAXDIM]
    cdef double frac[MAXDIM]
    cdef double xi, wgt, acc = 0.0, f0, f1
    cdef const double* ax
    cdef const double* v = G.values
    if d == 0:
        return v[0]
    for i in range(d):
        xi = x[i]
        if xi > G.hi[i]:
            return 0.0
        if xi < G.lo[i]:
            xi = G.lo[i]
        cell[i] = _cell(G, i, xi)
        ax = G.axes + G.offsets[i]
        frac[i] = (xi - ax[cell[i]]) / (ax[cell[i] + 1] - ax[cell[i]])
    if d == 1:
        return v[cell[0]] + frac[0] * (v[cell[0] + 1] - v[cell[0]])
    if d == 2:
        c0 = cell[0] * G.lengths[1] + cell[1]
        c1 = c0 + G.lengths[1]
        f0 = v[c0] + frac[1] * (v[c0 + 1] - v[c0])
        f1 = v[c1] + frac[1] * (v[c1 + 1] - v[c1])
        return f0 + frac[0] * (f1 - f0)
    for corner in range(1 << d):
        wgt = 1.0
        flat = 0
        stride = 1
        for i in range(d - 1, -1, -1):
            if (corner >> i) & 1:
                wgt *= frac[i]
                flat += (cell[i] + 1) * stride
            else:
                wgt *= 1.0 - frac[i]
                flat += cell[i] * stride
            stride *= G.lengths[i]
        if wgt != 0.0:
            acc += wgt * v[flat]
    return acc


def interp_multilinear(const double[::1] axes, const Py_ssize_t[::1] offsets, const Py_ssize_t[::1] lengths,
                       const double[::1] values, const double[:, ::1] points):
    cdef Py_ssize_t n = points.shape[0], d = points.shape[1], j, i
    cdef double x[MAXDIM]
    cdef Grid G
    _grid_init(&G, axes, offsets, lengths, values, d)
    out = np.empty(n)
    cdef double[::1] o = out
    try:
        with nogil:
            for j in range(n):
                for i in range(d):
                    x[i] = points[j, i]
                o[j] = _interp(&G, x)
    finally:
        _grid_free(&G)
    return out


def node_terms(const double[:, :, ::1] A, const double[:, :, ::1] B, const double[::1] wq,
               const double[::1] p, double lam_c,
               const double[::1] axes, const Py_ssize_t[::1] offsets, const Py_ssize_t[::1] lengths,
               const double[::1] values, const double[::1] node, double bj, double shift,
               double[:, ::1] g, double[:, ::1] r, double[:, ::1] al, double[:, ::1] be):
    """Fill the linear pieces of the Fredholm integrand at one node.

    For sample (q, s) the integrand equals ``al + be * y`` when ``g * y < r``
    and 0 otherwise; ``y`` is the trial value of the last coordinate.  With
    ``shift`` = 1 the whole in-box surface moves with ``y - bj``.
    """
    cdef Py_ssize_t Q = A.shape[0], S = A.shape[1], N = A.shape[2], d = N - 1
    cdef Py_ssize_t q, s, i
    cdef double x[MAXDIM]
    cdef double lin, t0, h, aN, bN, w
    cdef bint inside
    cdef Grid G
    _grid_init(&G, axes, offsets, lengths, values, d)
    try:
        with nogil:
            for q in range(Q):
                w = wq[q]
                for s in range(S):
                    lin = 0.0
                    inside = True
                    for i in range(d):
                        x[i] = A[q, s, i] * node[i] + B[q, s, i]
                        lin += p[i] * x[i]
                        if x[i] > G.hi[i]:
                            inside = False
                    if inside:
                        t0 = _interp(&G, x)
                        h = shift
                    else:
                        t0 = 0.0
                        h = 0.0
                    aN = A[q, s, d]
                    bN = B[q, s, d]
                    g[q, s] = aN - h
                    r[q, s] = t0 - h * bj - bN
                    al[q, s] = w * (lin + p[d] * bN - lam_c)
                    be[q, s] = w * p[d] * aN
    finally:
        _grid_free(&G)


cdef struct Piece:
    double z
    double a
    double b
    int up  # 1: active below z, 0: active above z


cdef int _cmp_piece(const void* u, const void* v) noexcept nogil:
    cdef double a = (<Piece*>u).z, b = (<Piece*>v).z
    return (a > b) - (a < b)


def piecewise_root(const double[:, ::1] g, const double[:, ::1] r, const double[:, ::1] al,
                   const double[:, ::1] be, double lo, double hi):
    """First up-crossing of ``F(y) = mean_s sum_q 1{g y < r}(al + be y)`` on [lo, hi].

    Returns ``(y, status, F(lo), F(hi))`` where status is 0 for an interior
    root, -1 when F(lo) >= 0 and +1 when F(hi) < 0 (y is then clamped).
    Breakpoints are bucketed by value and each bucket is sorted only when the
    sweep reaches it.
    """
    cdef Py_ssize_t Q = g.shape[0], S = g.shape[1], q, s, nlive = 0, k, nb, bk, start, end
    cdef double c0 = 0.0, c1 = 0.0, z, s0 = 0.0, s1 = 0.0, f_lo, f_hi, y0, y1, f0, f1, root, gq
    cdef double a_hi = 0.0, b_hi = 0.0, width
    cdef Piece* live = <Piece*>malloc(Q * S * sizeof(Piece))
    cdef Piece* buf = NULL
    cdef Py_ssize_t* off = NULL
    cdef int status = 1
    cdef bint found = False
    if live == NULL:
        raise MemoryError()
    try:
        with nogil:
            for q in range(Q):
                for s in range(S):
                    gq = g[q, s]
                    if gq > 0.0:
                        z = r[q, s] / gq
                        if z >= hi:
                            c0 += al[q, s]
                            c1 += be[q, s]
                        elif z > lo:
                            live[nlive].z = z
                            live[nlive].a = al[q, s]
                            live[nlive].b = be[q, s]
                            live[nlive].up = 1
                            nlive += 1
                            s0 += al[q, s]
                            s1 += be[q, s]
                    elif gq < 0.0:
                        z = r[q, s] / gq
                        if z <= lo:
                            c0 += al[q, s]
                            c1 += be[q, s]
                        elif z < hi:
                            live[nlive].z = z
                            live[nlive].a = al[q, s]
                            live[nlive].b = be[q, s]
                            live[nlive].up = 0
                            nlive += 1
                            a_hi += al[q, s]
                            b_hi += be[q, s]
                    elif r[q, s] > 0.0:
                        c0 += al[q, s]
                        c1 += be[q, s]
            f_lo = c0 + s0 + (c1 + s1) * lo
            f_hi = c0 + a_hi + (c1 + b_hi) * hi
        nb = max(1, min(4096, nlive // 16))
        buf = <Piece*>malloc((nlive + 1) * sizeof(Piece))
        off = <Py_ssize_t*>malloc((nb + 1) * sizeof(Py_ssize_t))
        if buf == NULL or off == NULL:
            raise MemoryError()
        with nogil:
            root = hi
            if f_lo >= 0.0:
                status = -1
                root = lo
            else:
                # counting sort into value buckets
                width = (hi - lo) / nb
                for bk in range(nb + 1):
                    off[bk] = 0
                for k in range(nlive):
                    bk = <Py_ssize_t>((live[k].z - lo) / width)
                    if bk >= nb:
                        bk = nb - 1
                    elif bk < 0:
                        bk = 0
                    off[bk + 1] += 1
                for bk in range(nb):
                    off[bk + 1] += off[bk]
                for k in range(nlive):
                    bk = <Py_ssize_t>((live[k].z - lo) / width)
                    if bk >= nb:
                        bk = nb - 1
                    elif bk < 0:
                        bk = 0
                    buf[off[bk]] = live[k]
                    off[bk] += 1
                # off[bk] now holds the end of bucket bk
                y0 = lo
                start = 0
                for bk in range(nb):
                    end = off[bk]
                    if end - start > 1:
                        qsort(&buf[start], end - start, sizeof(Piece), _cmp_piece)
                    k = start
                    while k < end:
                        y1 = buf[k].z
                        f0 = c0 + s0 + (c1 + s1) * y0
                        f1 = c0 + s0 + (c1 + s1) * y1
                        if f0 >= 0.0:
                            root = y0
                            found = True
                            break
                        if f1 >= 0.0:
                            root = y0 + (y1 - y0) * (-f0) / (f1 - f0)
                            found = True
                            break
                        while k < end and buf[k].z == y1:
                            if buf[k].up:
                                s0 -= buf[k].a
                                s1 -= buf[k].b
                            else:
                                s0 += buf[k].a
                                s1 += buf[k].b
                            k += 1
                        y0 = y1
                    if found:
                        break
                    start = end
                if not found:
                    f0 = c0 + s0 + (c1 + s1) * y0
                    f1 = c0 + s0 + (c1 + s1) * hi
                    if f0 >= 0.0:
                        root = y0
                        found = True
                    elif f1 >= 0.0:
                        root = y0 + (hi - y0) * (-f0) / (f1 - f0)
                        found = True
                if found:
                    status = 0
    finally:
        free(live)
        free(buf)
        free(off)
    return root, status, f_lo / S, f_hi / S


def sample_sums(const double[:, ::1] g, const double[:, ::1] r, const double[:, ::1] al,
                const double[:, ::1] be, double y):
    """Per-sample time integrals at ``y`` (length S); their mean is F(y)."""
    cdef Py_ssize_t Q = g.shape[0], S = g.shape[1], q, s
    out = np.zeros(S)
    cdef double[::1] o = out
    with nogil:
        for q in range(Q):
            for s in range(S):
                if g[q, s] * y < r[q, s]:
                    o[s] += al[q, s] + be[q, s] * y
    return out


cdef inline void _flow_step(Py_ssize_t P, Py_ssize_t path, Py_ssize_t j, const double[:, :, ::1] dX,
                            const double[::1] dts, const Py_ssize_t[:, ::1] members, const Py_ssize_t[::1] sizes,
                            double mu, const double[::1] growth, double lam,
                            double* logE, double* invE, double* integ, double* phi0, double* phi,
                            Py_ssize_t N) noexcept nogil:
    cdef Py_ssize_t i, m
    cdef double dw, inv_new, dt = dts[j]
    for i in range(N):
        dw = 0.0
        for m in range(sizes[i]):
            dw += dX[path, j, members[i, m]]
        logE[i] += mu * dw + growth[i] * dt
        inv_new = exp(-logE[i])
        integ[i] += 0.5 * (invE[i] + inv_new) * dt
        invE[i] = inv_new
        phi[i] = (phi0[i] + lam * integ[i]) / inv_new


def detect_boundary(const double[:, :, ::1] dX, const double[::1] dts,
                    const Py_ssize_t[:, ::1] members, const Py_ssize_t[::1] sizes,
                    double mu, const double[::1] growth, double lam, const double[::1] phi0,
                    const double[::1] axes, const Py_ssize_t[::1] offsets, const Py_ssize_t[::1] lengths,
                    const double[::1] values):
    """First grid index where Phi^N >= b(Phi^1..Phi^{N-1}); -1 if never."""
    cdef Py_ssize_t P = dX.shape[0], T = dX.shape[1], N = members.shape[0], d = N - 1
    cdef Py_ssize_t path, j, i
    cdef double logE[MAXDIM * 16]
    cdef double invE[MAXDIM * 16]
    cdef double integ[MAXDIM * 16]
    cdef double ph0[MAXDIM * 16]
    cdef double phi[MAXDIM * 16]
    if N > MAXDIM * 16 or d > MAXDIM:
        raise ValueError("too many subsets")
    out = np.full(P, -1, dtype=np.intp)
    cdef Py_ssize_t[::1] o = out
    cdef Grid G
    _grid_init(&G, axes, offsets, lengths, values, d)
    try:
        with nogil:
            for path in range(P):
                for i in range(N):
                    logE[i] = 0.0
                    invE[i] = 1.0
                    integ[i] = 0.0
                    ph0[i] = phi0[i]
                    phi[i] = phi0[i]
                if phi[d] >= _interp(&G, phi):
                    o[path] = 0
                    continue
                for j in range(T):
                    _flow_step(P, path, j, dX, dts, members, sizes, mu, growth, lam, logE, invE, integ, ph0, phi, N)
                    if phi[d] >= _interp(&G, phi):
                        o[path] = j + 1
                        break
    finally:
        _grid_free(&G)
    return out


def detect_thresholds(const double[:, :, ::1] dX, const double[::1] dts,
                      const Py_ssize_t[:, ::1] members, const Py_ssize_t[::1] sizes,
                      double mu, const double[::1] growth, double lam, const double[::1] phi0,
                      const double[::1] p, const double[::1] thresholds):
    """First grid index where sum_i p_i Phi^i >= each (ascending) threshold; -1 if never."""
    cdef Py_ssize_t P = dX.shape[0], T = dX.shape[1], N = members.shape[0], K = thresholds.shape[0]
    cdef Py_ssize_t path, j, i, nxt
    cdef double stat
    cdef double logE[MAXDIM * 16]
    cdef double invE[MAXDIM * 16]
    cdef double integ[MAXDIM * 16]
    cdef double ph0[MAXDIM * 16]
    cdef double phi[MAXDIM * 16]
    if N > MAXDIM * 16:
        raise ValueError("too many subsets")
    out = np.full((P, K), -1, dtype=np.intp)
    cdef Py_ssize_t[:, ::1] o = out
    with nogil:
        for path in range(P):
            stat = 0.0
            for i in range(N):
                logE[i] = 0.0
                invE[i] = 1.0
                integ[i] = 0.0
                ph0[i] = phi0[i]
                stat += p[i] * phi0[i]
            nxt = 0
            while nxt < K and stat >= thresholds[nxt]:
                o[path, nxt] = 0
                nxt += 1
            j = 0
            while nxt < K and j < T:
                _flow_step(P, path, j, dX, dts, members, sizes, mu, growth, lam, logE, invE, integ, ph0, phi, N)
                stat = 0.0
                for i in range(N):
                    stat += p[i] * phi[i]
                while nxt < K and stat >= thresholds[nxt]:
                    o[path, nxt] = j + 1
                    nxt += 1
                j += 1
    return out
