"""Problem instance: scalar parameters and the ordered family of drift subsets."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

PROB_TOL = 1e-12


class ModelError(ValueError):
    pass


class InvalidK(ModelError):
    pass


class InvalidProbabilities(ModelError):
    pass


class DuplicateSubset(ModelError):
    pass


class EmptyFamily(ModelError):
    pass


class InvalidSubset(ModelError):
    pass


class ConfigError(ModelError):
    pass


def _check_probs(probs: Sequence[float]) -> list[float]:
    probs = [float(p) for p in probs]
    if any(not math.isfinite(p) or p < 0 for p in probs):
        raise InvalidProbabilities("probabilities must be finite and non-negative")
    total = math.fsum(probs)
    if abs(total - 1.0) > PROB_TOL:
        raise InvalidProbabilities(f"probabilities sum to {total!r}, not 1")
    return [p / total for p in probs]


@dataclass(frozen=True)
class IndexFamily:
    """Ordered subsets of {1..n} that may receive the drift.

    Subsets are 1-based increasing tuples, sorted by size and then
    lexicographically.  Zero-probability subsets are never stored.
    """

    n: int
    subsets: tuple[tuple[int, ...], ...]
    probs: tuple[float, ...]
    incidence: np.ndarray = field(repr=False, compare=False)

    @classmethod
    def _make(cls, n, subsets, probs):
        incidence = np.zeros((len(subsets), n), dtype=np.int64)
        for i, s in enumerate(subsets):
            incidence[i, [m - 1 for m in s]] = 1
        incidence.setflags(write=False)
        return cls(n, tuple(subsets), tuple(probs), incidence)

    @property
    def N(self) -> int:
        return len(self.subsets)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(s) for s in self.subsets], dtype=np.int64)

    @property
    def p(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)

    def overlap_matrix(self) -> np.ndarray:
        return self.incidence @ self.incidence.T

    def members(self, i: int) -> list[int]:
        """0-based coordinate indices of subset ``i`` (0-based)."""
        return [m - 1 for m in self.subsets[i]]

    def entries(self) -> list[tuple[tuple[int, ...], float]]:
        return list(zip(self.subsets, self.probs))


def build_family(n: int, k: int, probs: Sequence[float]) -> IndexFamily:
    """All size-``k`` subsets of {1..n} in lexicographic order, trimmed of zeros."""
    if n < 1:
        raise ModelError("n must be a positive integer")
    if k < 1 or k >= n:
        raise InvalidK(f"k must satisfy 1 <= k < n (got k={k}, n={n}); k = n is the classic one-dimensional problem")
    combos = list(itertools.combinations(range(1, n + 1), k))
    if len(probs) != len(combos):
        raise InvalidProbabilities(f"expected {len(combos)} probabilities, got {len(probs)}")
    probs = _check_probs(probs)
    kept = [(s, p) for s, p in zip(combos, probs) if p > 0]
    return IndexFamily._make(n, [s for s, _ in kept], [p for _, p in kept])


def _normalize_subset(n: int, subset) -> tuple[int, ...]:
    if isinstance(subset, int):
        subset = (subset,)
    s = tuple(int(m) for m in subset)
    if not s:
        raise InvalidSubset("empty subset")
    if any(b <= a for a, b in zip(s, s[1:])):
        raise InvalidSubset(f"subset {s} is not strictly increasing")
    if s[0] < 1 or s[-1] > n:
        raise InvalidSubset(f"subset {s} not within 1..{n}")
    return s


def build_general_family(n: int, entries) -> IndexFamily:
    """Mixed-size family from ``(subset, prob)`` pairs or a ``{subset: prob}`` mapping."""
    if n < 1:
        raise ModelError("n must be a positive integer")
    if isinstance(entries, dict):
        entries = list(entries.items())
    seen = set()
    cleaned = []
    for subset, p in entries:
        s = _normalize_subset(n, subset)
        if s in seen:
            raise DuplicateSubset(f"subset {s} listed twice")
        seen.add(s)
        cleaned.append((s, p))
    probs = [p for _, p in cleaned]
    if probs and all(float(p) == 0 for p in probs):
        raise EmptyFamily("all subset probabilities are zero")
    if not cleaned:
        raise EmptyFamily("no subsets given")
    probs = _check_probs(probs)
    kept = sorted(((s, p) for (s, _), p in zip(cleaned, probs) if p > 0), key=lambda e: (len(e[0]), e[0]))
    return IndexFamily._make(n, [s for s, _ in kept], [p for _, p in kept])


def overlap(family: IndexFamily, i: int, j: int) -> int:
    """Number of shared coordinates between subsets ``i`` and ``j`` (1-based)."""
    N = family.N
    if not (1 <= i <= N and 1 <= j <= N):
        raise IndexError(f"subset index out of range 1..{N}: ({i}, {j})")
    return len(set(family.subsets[i - 1]) & set(family.subsets[j - 1]))


@dataclass(frozen=True)
class ProblemSpec:
    n: int
    mu: float
    lam: float
    c: float
    pi0: float
    family: IndexFamily

    def __post_init__(self):
        if self.n < 1:
            raise ModelError("n must be >= 1")
        if self.family.n != self.n:
            raise ModelError("family dimension does not match n")
        if not self.lam > 0:
            raise ModelError("lambda must be > 0")
        if not self.c > 0:
            raise ModelError("c must be > 0")
        if self.mu == 0 or not math.isfinite(self.mu):
            raise ModelError("mu must be a non-zero real")
        if not 0 <= self.pi0 < 1:
            raise ModelError("pi0 must lie in [0, 1)")

    @property
    def N(self) -> int:
        return self.family.N

    @property
    def p(self) -> np.ndarray:
        return self.family.p

    @property
    def k(self) -> np.ndarray:
        return self.family.sizes

    @property
    def kappa(self) -> np.ndarray:
        """Per-subset 2*lam / (k_i mu^2)."""
        return 2.0 * self.lam / (self.k * self.mu**2)

    @property
    def growth(self) -> np.ndarray:
        """Per-subset exponent rate lam - k_i mu^2 / 2 of e^{lam t} L_t."""
        return self.lam - 0.5 * self.k * self.mu**2

    @property
    def phi0(self) -> float:
        return self.pi0 / (1.0 - self.pi0)

    def with_pi0(self, pi0: float) -> "ProblemSpec":
        return ProblemSpec(self.n, self.mu, self.lam, self.c, pi0, self.family)

    def digest(self) -> str:
        import hashlib

        text = repr((self.n, self.mu, self.lam, self.c, self.pi0, self.family.subsets, self.family.probs))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mu": self.mu,
            "lambda": self.lam,
            "c": self.c,
            "pi0": self.pi0,
            "subsets": [list(s) for s in self.family.subsets],
            "probs": list(self.family.probs),
        }


# config files --------------------------------------------------------------

_KEYS = {"n", "mu", "lambda", "c", "pi0", "mode", "k", "probs", "entries"}


def _parse_prob(text: str) -> float:
    text = text.strip()
    if "/" in text:
        return float(Fraction(text))
    return float(text)


def parse_config(text: str) -> ProblemSpec:
    """Parse the flat ``key=value`` config format.

    Blank lines and ``#`` comments are ignored.  ``mode=exact`` needs ``k``
    and ``probs`` (comma list, ``uniform`` allowed); ``mode=general`` needs
    ``entries`` such as ``1:0.4; 1,2:0.3; 1,2,3:0.3``.
    """
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = val

    try:
        n = int(values["n"])
        mu = float(values["mu"])
        lam = float(values["lambda"])
        c = float(values["c"])
    except KeyError as e:
        raise ConfigError(f"missing key {e.args[0]!r}") from None
    except ValueError as e:
        raise ConfigError(str(e)) from None
    pi0 = float(values.get("pi0", "0"))
    mode = values.get("mode", "exact")

    if mode == "exact":
        if "entries" in values:
            raise ConfigError("'entries' is only valid with mode=general")
        if "k" not in values:
            raise ConfigError("mode=exact requires k")
        k = int(values["k"])
        probs_text = values.get("probs", "uniform")
        if probs_text.strip() == "uniform":
            count = math.comb(n, k) if 0 <= k <= n else 0
            probs = [1.0 / count] * count if count else []
        else:
            probs = [_parse_prob(p) for p in probs_text.split(",")]
        family = build_family(n, k, probs)
    elif mode == "general":
        if "k" in values or "probs" in values:
            raise ConfigError("'k'/'probs' are only valid with mode=exact")
        if "entries" not in values:
            raise ConfigError("mode=general requires entries")
        entries = []
        for chunk in values["entries"].split(";"):
            chunk = chunk.strip()
            if not chunk:
                continue
            if ":" not in chunk:
                raise ConfigError(f"bad entry {chunk!r}; expected subset:prob")
            subset, prob = chunk.rsplit(":", 1)
            entries.append((tuple(int(m) for m in subset.split(",")), _parse_prob(prob)))
        family = build_general_family(n, entries)
    else:
        raise ConfigError(f"mode must be exact or general, not {mode!r}")
    return ProblemSpec(n, mu, lam, c, pi0, family)


def load_config(path) -> ProblemSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def figure1_spec(pi0: float = 0.0) -> ProblemSpec:
    """n=3, k=2, mu=lam=c=1 with uniform subset probabilities."""
    return ProblemSpec(3, 1.0, 1.0, 1.0, pi0, build_family(3, 2, [1 / 3] * 3))
