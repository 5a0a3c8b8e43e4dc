"""Exact Lie-bracket rank checks for the affine vector fields of the flow generator.

Fields have the form ``phi -> A phi + d`` with rational ``A`` and ``d``.  The
drift field has diagonal linear part ``a_i = lam - k_i mu^2 / 2`` and
constant part ``lam``; diffusion field ``j`` is ``diag(I[:, j])`` up to the
scalar ``mu / sqrt(2)``, which is dropped since ranks ignore nonzero scales.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

DENOM_CAP = 10**9


class DimensionError(ValueError):
    pass


def rational(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(x).limit_denominator(DENOM_CAP)


@dataclass(frozen=True)
class AffineField:
    A: tuple  # tuple of row tuples of Fraction
    d: tuple

    @classmethod
    def make(cls, A, d) -> "AffineField":
        A = tuple(tuple(rational(x) for x in row) for row in A)
        d = tuple(rational(x) for x in d)
        if len(A) != len(d) or any(len(row) != len(d) for row in A):
            raise DimensionError("linear part must be square and match the constant part")
        return cls(A, d)

    @classmethod
    def zero(cls, n: int) -> "AffineField":
        z = Fraction(0)
        return cls(tuple((z,) * n for _ in range(n)), (z,) * n)

    @property
    def dim(self) -> int:
        return len(self.d)

    def __call__(self, point) -> tuple:
        point = [rational(x) for x in point]
        if len(point) != self.dim:
            raise DimensionError(f"point has {len(point)} coordinates, field has {self.dim}")
        return _matvec(self.A, point) if not any(self.d) else tuple(
            x + c for x, c in zip(_matvec(self.A, point), self.d))

    def is_zero(self) -> bool:
        return not any(self.d) and not any(any(row) for row in self.A)

    def flat(self) -> dict:
        """Nonzero entries keyed by position in (A row-major, d)."""
        n = self.dim
        out = {i * n + j: x for i, row in enumerate(self.A) for j, x in enumerate(row) if x}
        out.update({n * n + i: x for i, x in enumerate(self.d) if x})
        return out

    def __add__(self, other: "AffineField") -> "AffineField":
        _same_dim(self, other)
        A = tuple(tuple(x + y for x, y in zip(r, s)) for r, s in zip(self.A, other.A))
        return AffineField(A, tuple(x + y for x, y in zip(self.d, other.d)))

    def scale(self, c) -> "AffineField":
        c = rational(c)
        return AffineField(tuple(tuple(c * x for x in row) for row in self.A), tuple(c * x for x in self.d))


def _same_dim(X, Y):
    if X.dim != Y.dim:
        raise DimensionError(f"fields of dimension {X.dim} and {Y.dim}")


def _matmul(P, Q):
    # skips zeros; the fields met in practice are diagonal or zero
    n = len(P)
    z = Fraction(0)
    out = [[z] * n for _ in range(n)]
    for i, row in enumerate(P):
        for k, a in enumerate(row):
            if a:
                for j, b in enumerate(Q[k]):
                    if b:
                        out[i][j] += a * b
    return tuple(tuple(r) for r in out)


def _matvec(P, v):
    z = Fraction(0)
    return tuple(sum((a * x for a, x in zip(row, v) if a and x), z) for row in P)


def lie_bracket(X: AffineField, Y: AffineField) -> AffineField:
    """[X, Y] = X Y - Y X as first-order operators."""
    _same_dim(X, Y)
    ab, ba = _matmul(Y.A, X.A), _matmul(X.A, Y.A)
    A = tuple(tuple(p - q for p, q in zip(r, s)) for r, s in zip(ab, ba))
    d = tuple(p - q for p, q in zip(_matvec(Y.A, X.d), _matvec(X.A, Y.d)))
    return AffineField(A, d)


def _diag(entries):
    n = len(entries)
    z = Fraction(0)
    return tuple(tuple(entries[i] if i == j else z for j in range(n)) for i in range(n))


def drift_coefficients(spec) -> list:
    lam = rational(spec.lam)
    mu2 = rational(spec.mu**2)
    return [lam - Fraction(int(k)) * mu2 / 2 for k in spec.k]


def drift_field(spec) -> AffineField:
    lam = rational(spec.lam)
    a = drift_coefficients(spec)
    return AffineField(_diag(a), (lam,) * spec.N)


def diffusion_fields(spec) -> list:
    """The n diffusion fields in scale-free form (multiplier ``diffusion_scale``)."""
    inc = spec.family.incidence
    z = Fraction(0)
    return [AffineField(_diag([Fraction(int(inc[i, j])) for i in range(spec.N)]), (z,) * spec.N)
            for j in range(spec.n)]


def diffusion_scale(spec) -> float:
    return abs(spec.mu) / 2**0.5


# exact linear algebra ------------------------------------------------------------


class _Echelon:
    """Row-echelon basis over the rationals with sparse rows.

    Each stored row also carries the combination of inserted vectors it
    equals, so targets in the span can be written in terms of the inputs.
    """

    def __init__(self):
        self.rows: list[tuple[int, dict, dict]] = []  # (pivot, row, combination)
        self.count = 0

    @staticmethod
    def _sparse(v) -> dict:
        if isinstance(v, dict):
            return {k: x for k, x in v.items() if x}
        return {i: Fraction(x) for i, x in enumerate(v) if x}

    def _reduce(self, v: dict, combo: dict):
        for piv, row, rc in self.rows:
            c = v.get(piv)
            if c:
                for k, x in row.items():
                    y = v.get(k, 0) - c * x
                    if y:
                        v[k] = y
                    else:
                        v.pop(k, None)
                for k, x in rc.items():
                    y = combo.get(k, 0) - c * x
                    if y:
                        combo[k] = y
                    else:
                        combo.pop(k, None)
        return v, combo

    def reduce(self, v) -> dict:
        return self._reduce(self._sparse(v), {})[0]

    def add(self, v) -> bool:
        tag = self.count
        self.count += 1
        v, combo = self._reduce(self._sparse(v), {tag: Fraction(1)})
        if not v:
            return False
        piv = min(v)
        c = v[piv]
        v = {k: x / c for k, x in v.items()}
        combo = {k: x / c for k, x in combo.items()}
        self.rows.append((piv, v, combo))
        return True

    def express(self, target):
        """Coefficients over inserted vectors (by insertion order) giving ``target``, or None."""
        v, combo = self._reduce(self._sparse(target), {})
        if v:
            return None
        return {k: -x for k, x in combo.items() if x}

    @property
    def rank(self) -> int:
        return len(self.rows)


def exact_rank(vectors) -> int:
    e = _Echelon()
    for v in vectors:
        e.add(v)
    return e.rank


# certificates ----------------------------------------------------------------------


@dataclass
class RankCertificate:
    rank: int
    N: int
    point: tuple
    witnesses: dict = field(default_factory=dict)  # coordinate (1-based) -> word
    unreached: list = field(default_factory=list)
    depth: int = 0
    words_explored: int = 0
    parabolic: bool = False
    spot_ranks: list = field(default_factory=list)

    @property
    def full(self) -> bool:
        return self.rank == self.N

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "N": self.N,
            "full": self.full,
            "parabolic": self.parabolic,
            "point": [str(x) for x in self.point],
            "depth": self.depth,
            "words_explored": self.words_explored,
            "witnesses": {str(j): witness_label(w) for j, w in sorted(self.witnesses.items())},
            "unreached": list(self.unreached),
            "spot_ranks": list(self.spot_ranks),
        }


def word_label(word) -> str:
    """Left-nested bracket text, e.g. (0, 1, 2) -> [[D0,D1],D2]."""
    if isinstance(word, str):
        return word
    text = f"D{word[0]}"
    for w in word[1:]:
        text = f"[{text},D{w}]"
    return text


def witness_label(w) -> str:
    """A word, or a rational combination of words such as ``1*[D0,D2] - 1*[[D0,D2],D3]``."""
    if isinstance(w, list):
        parts = []
        for c, word in w:
            sign = "-" if c < 0 else "+"
            parts.append(f"{sign} {abs(c)}*{word_label(word)}")
        text = " ".join(parts)
        return text[2:] if text.startswith("+ ") else "-" + text[2:]
    return word_label(w)


def is_single_word(w) -> bool:
    return not isinstance(w, list)


def _unit_index(v) -> Optional[int]:
    nz = [i for i, x in enumerate(v) if x]
    return nz[0] if len(nz) == 1 else None


def _explore(fields: list, depth: int, full: bool):
    """Words up to ``depth`` letters; linearly dependent fields are not extended.

    A field that is a combination of earlier ones has brackets that are the
    same combination of earlier brackets, so pruning loses nothing.
    """
    basis = _Echelon()
    kept: list[tuple[tuple, AffineField]] = []
    generated = []  # every nonzero word, kept or not, in search order
    frontier = []
    explored = 0
    for i, f in enumerate(fields):
        explored += 1
        generated.append(((i,), f))
        if basis.add(f.flat()):
            kept.append(((i,), f))
            frontier.append(((i,), f))
    for _ in range(depth - 1):
        nxt = []
        partners = list(enumerate(fields)) if not full else list(kept)
        for word, f in frontier:
            for p, g in partners:
                explored += 1
                h = lie_bracket(f, g)
                if h.is_zero():
                    continue
                # full search labels words by their bracket text
                new_word = word + (p,) if not full else f"[{word_label(word)},{word_label(p)}]"
                generated.append((new_word, h))
                if basis.add(h.flat()):
                    kept.append((new_word, h))
                    nxt.append((new_word, h))
        if not nxt:
            break
        frontier = nxt
    return kept, generated, explored


def _certificate(fields, point, depth, full, parabolic):
    kept, generated, explored = _explore(fields, depth, full)
    dim = fields[0].dim
    witnesses = {}
    for word, f in generated:
        j = _unit_index(f(point))
        if j is not None and (j + 1) not in witnesses:
            witnesses[j + 1] = word
    span = _Echelon()
    for _, f in kept:
        span.add(f(point))
    missing = []
    for j in range(dim):
        e = [Fraction(0)] * dim
        e[j] = Fraction(1)
        combo = span.express(e)
        if combo is None:
            missing.append(j + 1)
        elif (j + 1) not in witnesses:
            # no single word points along e_j; record an exact combination instead
            witnesses[j + 1] = [(c, kept[k][0]) for k, c in sorted(combo.items())]
    cert = RankCertificate(span.rank, dim, tuple(point), witnesses, missing, depth, explored, parabolic)
    return cert, kept


def default_depth(spec) -> int:
    return int(max(spec.k)) + 2


def _point(spec, point, dim):
    if point is None:
        point = (1,) * dim
    point = tuple(rational(x) for x in point)
    if len(point) != dim:
        raise DimensionError(f"point must have {dim} coordinates")
    if any(x <= 0 for x in point[-spec.N:]):
        raise ValueError("point must be interior (all coordinates > 0)")
    return point


def random_points(dim: int, count: int = 3, seed: int = 0) -> list:
    g = random.Random(seed)
    return [tuple(Fraction(g.randint(1, 97), g.randint(1, 13)) for _ in range(dim)) for _ in range(count)]


def check_hormander(spec, point=None, depth: Optional[int] = None, full: bool = False,
                    spot_checks: int = 3, seed: int = 0) -> RankCertificate:
    """Rank of the generated Lie algebra at ``point`` (default all ones)."""
    fields = [drift_field(spec)] + diffusion_fields(spec)
    depth = default_depth(spec) if depth is None else depth
    cert, kept = _certificate(fields, _point(spec, point, spec.N), depth, full, False)
    for q in random_points(spec.N, spot_checks, seed):
        cert.spot_ranks.append(exact_rank(f(q) for _, f in kept))
    return cert


def parabolic_fields(spec) -> list:
    """Fields on (t, phi): drift gains a -1 in time, diffusions a 0."""
    def lift(f: AffineField, c) -> AffineField:
        z = Fraction(0)
        A = ((z,) * (f.dim + 1),) + tuple((z,) + row for row in f.A)
        return AffineField(A, (Fraction(c),) + f.d)

    return [lift(drift_field(spec), -1)] + [lift(f, 0) for f in diffusion_fields(spec)]


def check_parabolic(spec, point=None, depth: Optional[int] = None, full: bool = False,
                    spot_checks: int = 3, seed: int = 0) -> RankCertificate:
    """Rank in dimension N+1; ``point`` may omit the time coordinate."""
    if point is not None and len(point) == spec.N:
        point = (0,) + tuple(point)
    if point is None:
        point = (0,) + (1,) * spec.N
    fields = parabolic_fields(spec)
    depth = default_depth(spec) if depth is None else depth
    pt = _point(spec, point, spec.N + 1)
    cert, kept = _certificate(fields, pt, depth, full, True)
    for q in random_points(spec.N, spot_checks, seed):
        cert.spot_ranks.append(exact_rank(f((Fraction(0),) + q) for _, f in kept))
    return cert
