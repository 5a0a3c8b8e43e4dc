"""Scalar building blocks: running cost, Mayer function, 1-d stopping points, bound planes.

Every coordinate ``i`` is driven by ``k_i`` independent Brownian motions, so
its effective squared drift is ``k_i mu^2``.  The Mayer function and the 1-d
stopping point use ``kappa_i = 2 lam / (k_i mu^2)``; pass ``literal=True`` to
drop the ``k_i`` factor and get the unscaled ``kappa = 2 lam / mu^2`` instead.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

V_CUTOFF = 1.0 - 1e-14


class DomainError(ValueError):
    pass


class QuadratureError(RuntimeError):
    pass


class BracketError(RuntimeError):
    pass


def running_cost(probs, lam: float, c: float, phi) -> float:
    phi = np.asarray(phi, dtype=float)
    if np.any(phi < 0):
        raise DomainError("running cost is defined on the non-negative orthant")
    return float(np.dot(np.asarray(probs, dtype=float), phi) - lam / c)


def _log_weight(u: float, v: float, kappa: float) -> float:
    # log of  u^(kappa-1) e^(-kappa/u) (1-u)^-(kappa+2)  *  ((1-v)/v)^kappa e^(kappa/v)
    return (
        (kappa - 1.0) * math.log(u)
        - kappa / u
        - (kappa + 2.0) * math.log1p(-u)
        + kappa * (math.log1p(-v) - math.log(v))
        + kappa / v
    )


def _quad(f, a, b, epsabs, epsrel, limit=200):
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, _ = integrate.quad(f, a, b, epsabs=epsabs, epsrel=epsrel, limit=limit)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(str(exc)) from None
    return val


def inner_scaled(v: float, kappa: float, tol: float = 1e-13) -> float:
    """Inner integral times its outer weight, evaluated in log space.

    Equals the left-hand side of the 1-d stopping-point equation at
    ``phi = v / (1 - v)``.
    """
    if v <= 0.0:
        return 0.0
    v = min(v, V_CUTOFF)
    return _quad(lambda u: math.exp(_log_weight(u, v, kappa)) if u > 0 else 0.0, 0.0, v, 0.0, tol)


def stopping_lhs(phi: float, kappa: float, tol: float = 1e-13) -> float:
    """Left-hand side of the 1-d stopping-point equation."""
    if phi <= 0:
        return 0.0
    return inner_scaled(phi / (1.0 + phi), kappa, tol)


def mayer_one(phi: float, kappa: float, tol: float = 1e-10, lam: float = 1.0) -> float:
    """One-coordinate Mayer function.

    Solves ``lam (1+phi) M' + (lam/kappa) phi^2 M'' - lam M = phi`` with the
    bounded-at-zero normalisation, by nested adaptive quadrature.
    """
    if phi < 0:
        raise DomainError("phi must be >= 0")
    if not kappa > 0 or not tol > 0:
        raise DomainError("kappa and tol must be positive")
    if phi == 0:
        return 0.0
    vmax = min(phi / (1.0 + phi), V_CUTOFF)
    scale = (kappa / lam) * (1.0 + phi)
    outer = _quad(lambda v: inner_scaled(v, kappa, min(1e-13, tol)), 0.0, vmax, tol / scale, 1e-13)
    return scale * outer


def coordinate_kappa(spec, literal: bool = False) -> np.ndarray:
    if literal:
        return np.full(spec.N, 2.0 * spec.lam / spec.mu**2)
    return spec.kappa


def mayer_full(spec, phi, tol: float = 1e-10, literal: bool = False) -> float:
    phi = np.asarray(phi, dtype=float)
    if np.any(phi < 0):
        raise DomainError("phi must be in the non-negative orthant")
    kappa = coordinate_kappa(spec, literal)
    total = math.fsum(
        p * mayer_one(x, kap, tol, spec.lam) for p, x, kap in zip(spec.p, phi, kappa)
    )
    return total + 1.0 / spec.c


def phi_star_root(kappa: float, rhs: float, tol: float = 1e-10) -> float:
    """Unique root of ``stopping_lhs(phi, kappa) = rhs`` above ``kappa * rhs``.

    ``kappa * rhs`` is the effective ``lam / c`` of the 1-d problem.
    """
    if not kappa > 0 or not rhs > 0:
        raise DomainError("kappa and rhs must be positive")
    lower = kappa * rhs
    f = lambda x: stopping_lhs(x, kappa) - rhs  # noqa: E731
    if f(lower) >= 0:
        raise BracketError(f"left-hand side already exceeds rhs at the lower end {lower}")
    upper = 2.0 * lower
    while f(upper) <= 0:
        upper *= 2.0
        if upper > 2.0**60 * lower:
            raise BracketError("no sign change below 2^60 * lower")
    return optimize.brentq(f, lower, upper, xtol=1e-300, rtol=max(tol, 4 * np.finfo(float).eps), maxiter=500)


def effective_params(spec, literal: bool = False):
    """Per-coordinate (kappa_i, rhs_i) for the 1-d problem of coordinate i alone."""
    kappa = coordinate_kappa(spec, literal)
    lam_over_c = spec.lam / (spec.p * spec.c)
    return kappa, lam_over_c / kappa


def phi_star_all(spec, tol: float = 1e-10, literal: bool = False) -> np.ndarray:
    kappa, rhs = effective_params(spec, literal)
    cache: dict[tuple[float, float], float] = {}
    out = []
    for kap, r in zip(kappa, rhs):
        key = (float(kap), float(r))
        if key not in cache:
            cache[key] = phi_star_root(kap, r, tol)
        out.append(cache[key])
    return np.array(out)


@dataclass(frozen=True)
class KernelParams:
    kappa: np.ndarray
    rhs1d: np.ndarray
    phi_star: np.ndarray


def kernel_params(spec, tol: float = 1e-10) -> KernelParams:
    kappa, rhs = effective_params(spec)
    return KernelParams(kappa, rhs, phi_star_all(spec, tol))


@dataclass(frozen=True)
class BoundPlanes:
    """Affine lower and upper bounds for the stopping boundary.

    Both are functions of the first ``N-1`` coordinates and are clamped at
    zero.  ``lower_box``/``upper_box`` hold the per-axis upper limits of the
    boxes on which each plane bound is asserted.
    """

    p: np.ndarray
    lam: float
    c: float
    phi_star: np.ndarray

    @property
    def lower_intercept(self) -> float:
        return self.lam / (self.p[-1] * self.c)

    @property
    def upper_intercept(self) -> float:
        return float(self.phi_star[-1])

    @property
    def lower_box(self) -> np.ndarray:
        return self.lam / (self.p[:-1] * self.c)

    @property
    def upper_box(self) -> np.ndarray:
        return np.asarray(self.phi_star[:-1], dtype=float)

    def lower_plane(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        slope = self.p[:-1] / self.p[-1]
        return self.lower_intercept - x @ slope

    def upper_plane(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        slope = self.phi_star[-1] / self.phi_star[:-1]
        return self.upper_intercept - x @ slope

    def lower(self, x) -> np.ndarray:
        return np.maximum(self.lower_plane(x), 0.0)

    def upper(self, x) -> np.ndarray:
        return np.maximum(self.upper_plane(x), 0.0)


def bound_surfaces(spec, phi_star=None) -> BoundPlanes:
    if phi_star is None:
        phi_star = phi_star_all(spec)
    return BoundPlanes(spec.p, spec.lam, spec.c, np.asarray(phi_star, dtype=float))
