"""Observation paths, likelihood ratios and the posterior-ratio flow.

The flow is computed from its explicit representation

    Phi_t^i = E_t^i (phi_i + lam * int_0^t ds / E_s^i),
    E_t^i   = exp(mu * sum_{j in i} X_t^j + (lam - k_i mu^2 / 2) t),

with the time integral done by the trapezoid rule on the path grid.  An
Euler-Maruyama scheme for the SDE form is kept as an independent check.

The posterior probability of a change is recovered as ``S / (1 + S)`` with
``S = sum_i p_i Phi^i``.  That identity is not quoted from anywhere: given
``theta > t`` the tag ``beta`` is independent of the observations, so
``P(beta = i, theta > t | F_t) = p_i (1 - Pi_t)`` and summing
``Phi^i (1 - Pi_t) p_i`` over ``i`` gives ``Pi_t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rng

NO_CHANGE = "nochange"
PRIOR = "prior"


@dataclass(frozen=True)
class ScenarioConfig:
    measure: str = PRIOR
    pi0: Optional[float] = None
    theta: Optional[float] = None
    beta: Optional[int] = None  # 1-based family index

    def __post_init__(self):
        if self.measure not in (NO_CHANGE, PRIOR):
            raise ValueError(f"unknown measure {self.measure!r}")
        if self.theta is not None and self.theta < 0:
            raise ValueError("forced theta must be >= 0")
        if self.pi0 is not None and not 0 <= self.pi0 <= 1:
            raise ValueError("pi0 must lie in [0, 1]")


@dataclass
class PathEnsemble:
    dt: float
    steps: int
    n_paths: int
    seed_root: int
    times: np.ndarray
    theta: np.ndarray  # inf when no change happens
    beta: np.ndarray  # 0-based family index, -1 for none
    dB: np.ndarray = field(repr=False)  # (paths, steps, n)
    X: np.ndarray = field(repr=False)  # (paths, steps+1, n)
    phi: np.ndarray = field(repr=False)  # (paths, steps+1, N)
    pi: np.ndarray = field(repr=False)  # (paths, steps+1)


def draw_scenarios(spec, scenario: ScenarioConfig, n_paths: int, seed: int):
    """Change times and tags for each path, one independent stream per path."""
    pi0 = spec.pi0 if scenario.pi0 is None else scenario.pi0
    theta = np.full(n_paths, np.inf)
    beta = np.full(n_paths, -1, dtype=np.int64)
    if scenario.measure == NO_CHANGE:
        return theta, beta
    cum = np.cumsum(spec.p)
    for path in range(n_paths):
        g = rng.path_generator(seed, path, rng.STREAM_SCENARIO)
        u_atom, e, u_beta = g.random(), g.standard_exponential(), g.random()
        if scenario.theta is not None:
            theta[path] = scenario.theta
        else:
            theta[path] = 0.0 if u_atom < pi0 else e / spec.lam
        if scenario.beta is not None:
            beta[path] = scenario.beta - 1
        else:
            beta[path] = min(int(np.searchsorted(cum, u_beta * cum[-1], side="right")), spec.N - 1)
    return theta, beta


def drift_increments(spec, times, theta, beta) -> np.ndarray:
    """Deterministic part of dX: mu * 1{coord in beta} * |[t_j, t_{j+1}] after theta|."""
    t0, t1 = times[:-1], times[1:]
    active = np.clip(t1[None, :] - np.maximum(t0[None, :], theta[:, None]), 0.0, None)  # (P, steps)
    mask = np.zeros((len(theta), spec.n))
    has = beta >= 0
    mask[has] = spec.family.incidence[beta[has]]
    return spec.mu * active[:, :, None] * mask[:, None, :]


def likelihood(spec, x_t, i: int, t: float) -> float:
    """L_t^i for the 1-based subset index ``i`` given the observation vector X_t."""
    members = spec.family.members(i - 1)
    x_t = np.asarray(x_t, dtype=float)
    k = len(members)
    return math.exp(spec.mu * float(x_t[members].sum()) - 0.5 * k * spec.mu**2 * t)


def log_growth(spec, X, times) -> np.ndarray:
    """log E_t for every subset along X (..., T, n) -> (..., T, N)."""
    W = X @ spec.family.incidence.T.astype(float)
    return spec.mu * W + np.multiply.outer(np.asarray(times), spec.growth)


def phi_flow(spec, X, times, phi0) -> np.ndarray:
    """Posterior-ratio trajectory along observation path(s) X of shape (..., T, n)."""
    phi0 = np.broadcast_to(np.asarray(phi0, dtype=float), (spec.N,))
    if np.any(phi0 < 0):
        raise ValueError("phi0 must be non-negative")
    times = np.asarray(times, dtype=float)
    logE = log_growth(spec, np.asarray(X, dtype=float), times)
    inv = np.exp(-logE)
    dt = np.diff(times)
    shape = list(inv.shape)
    shape[-2] = 1
    steps = 0.5 * (inv[..., 1:, :] + inv[..., :-1, :]) * dt[:, None]
    integral = np.concatenate([np.zeros(shape), np.cumsum(steps, axis=-2)], axis=-2)
    out = np.exp(logE) * (phi0 + spec.lam * integral)
    out[..., 0, :] = phi0
    return out


def euler_step(spec, phi, dB, dt: float) -> np.ndarray:
    """One Euler-Maruyama step of dPhi^i = lam(1+Phi^i)dt + mu Phi^i sum_{j in i} dB^j."""
    phi = np.asarray(phi, dtype=float)
    dW = np.asarray(dB, dtype=float) @ spec.family.incidence.T.astype(float)
    new = phi + spec.lam * (1.0 + phi) * dt + spec.mu * phi * dW
    return np.maximum(new, 0.0)


def euler_paths(spec, dB, dt: float, phi0) -> np.ndarray:
    """Euler trajectories for increments dB (..., steps, n) on a uniform grid."""
    dB = np.asarray(dB, dtype=float)
    phi = np.broadcast_to(np.asarray(phi0, dtype=float), dB.shape[:-2] + (spec.N,)).copy()
    out = np.empty(dB.shape[:-2] + (dB.shape[-2] + 1, spec.N))
    out[..., 0, :] = phi
    for j in range(dB.shape[-2]):
        phi = euler_step(spec, phi, dB[..., j, :], dt)
        out[..., j + 1, :] = phi
    return out


def posterior_from_phi(phi, probs):
    s = np.asarray(phi, dtype=float) @ np.asarray(probs, dtype=float)
    with np.errstate(invalid="ignore"):
        return np.where(np.isinf(s), 1.0, s / (1.0 + s))


def simulate_paths(spec, scenario: ScenarioConfig, horizon: float, dt: float, n_paths: int, seed: int) -> PathEnsemble:
    if not dt > 0 or horizon < dt or n_paths < 1:
        raise ValueError("need dt > 0, horizon >= dt and n_paths >= 1")
    if scenario.beta is not None and not 1 <= scenario.beta <= spec.N:
        raise ValueError("forced beta is not a valid family index")
    steps = int(round(horizon / dt))
    times = np.linspace(0.0, steps * dt, steps + 1)
    theta, beta = draw_scenarios(spec, scenario, n_paths, seed)
    dB = rng.normals(seed, range(n_paths), steps, spec.n) * math.sqrt(dt)
    dX = dB + drift_increments(spec, times, theta, beta)
    X = np.concatenate([np.zeros((n_paths, 1, spec.n)), np.cumsum(dX, axis=1)], axis=1)
    pi0 = spec.pi0 if scenario.pi0 is None else scenario.pi0
    phi = phi_flow(spec, X, times, pi0 / (1.0 - pi0) if pi0 < 1 else math.inf)
    pi = posterior_from_phi(phi, spec.p)
    return PathEnsemble(dt, steps, n_paths, seed, times, theta, beta, dB, X, phi, pi)


# coefficients of the affine flow ---------------------------------------------


def flow_grid(record_times, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Path grid of step about ``dt`` that contains every record time.

    Returns the grid and the index of each record time in it.
    """
    record_times = np.asarray(record_times, dtype=float)
    tmax = float(record_times.max())
    base = np.linspace(0.0, tmax, max(1, int(math.ceil(tmax / dt))) + 1)
    grid = np.union1d(base, record_times)
    # merge points closer than dt/10 to a record time
    keep = np.ones(len(grid), dtype=bool)
    rec = set(record_times.tolist())
    for j in range(1, len(grid)):
        if grid[j] - grid[j - 1] < dt * 1e-1:
            if grid[j] in rec and grid[j - 1] not in rec and j - 1 > 0:
                keep[j - 1] = False
            elif grid[j] not in rec:
                keep[j] = False
    grid = grid[keep]
    idx = np.searchsorted(grid, record_times)
    return grid, idx


def flow_coefficients(spec, record_times, n_samples: int, seed: int, dt: float = 5e-3,
                      stream: int = rng.STREAM_KERNEL, block: int = 256):
    """Affine flow coefficients under the no-change law.

    ``Phi_t = A_t * phi + B_t`` coordinate-wise for every start ``phi``.
    Returns arrays ``A, B`` of shape ``(len(record_times), n_samples, N)``.
    """
    grid, idx = flow_grid(record_times, dt)
    steps = len(grid) - 1
    sq = np.sqrt(np.diff(grid))
    inc = spec.family.incidence.T.astype(float)
    A = np.empty((len(idx), n_samples, spec.N))
    B = np.empty_like(A)
    for paths in rng.path_blocks(n_samples, block):
        z = rng.normals(seed, paths, steps, spec.n, stream)
        z *= sq[None, :, None]
        W = np.zeros((len(paths), steps + 1, spec.N))
        np.cumsum(z @ inc, axis=1, out=W[:, 1:, :])
        logE = spec.mu * W + np.multiply.outer(grid, spec.growth)
        inv = np.exp(-logE)
        integral = np.zeros_like(inv)
        np.cumsum(0.5 * (inv[:, 1:] + inv[:, :-1]) * np.diff(grid)[None, :, None], axis=1, out=integral[:, 1:])
        E = np.exp(logE[:, idx])
        sl = slice(paths.start, paths.stop)
        A[:, sl] = np.swapaxes(E, 0, 1)
        B[:, sl] = np.swapaxes(spec.lam * E * integral[:, idx], 0, 1)
    return A, B


# discretisation study ----------------------------------------------------------


@dataclass
class StrongErrors:
    dts: np.ndarray
    flow: np.ndarray  # mean |Phi_T - reference| per level, exact flow
    euler: np.ndarray  # same for Euler-Maruyama
    n_paths: int

    @property
    def flow_ratios(self) -> np.ndarray:
        return self.flow[:-1] / self.flow[1:]

    @property
    def euler_ratios(self) -> np.ndarray:
        return self.euler[:-1] / self.euler[1:]


def strong_errors(spec, dts=(1e-2, 5e-3, 2.5e-3), n_paths: int = 10000, seed: int = 0, horizon: float = 1.0,
                  refine: int = 8, phi0: float = 0.0, block: int = 1000) -> StrongErrors:
    """Strong error at ``horizon`` of both schemes on common Brownian paths.

    The reference is the exact flow on a grid ``refine`` times finer than the
    finest level; coarser increments are sums of the fine ones.
    """
    dts = np.asarray(dts, dtype=float)
    fine = dts.min() / refine
    steps = int(round(horizon / fine))
    mult = np.rint(dts / fine).astype(int)
    if np.any(np.abs(mult * fine - dts) > 1e-12) or np.any(steps % mult):
        raise ValueError("levels must be integer multiples of the fine step dividing the horizon")
    times = np.linspace(0.0, steps * fine, steps + 1)
    flow = np.zeros(len(dts))
    euler = np.zeros(len(dts))
    for paths in rng.path_blocks(n_paths, block):
        z = rng.normals(seed, paths, steps, spec.n) * math.sqrt(fine)
        X = np.concatenate([np.zeros((len(paths), 1, spec.n)), np.cumsum(z, axis=1)], axis=1)
        ref = phi_flow(spec, X, times, phi0)[:, -1]
        for i, (m, dt) in enumerate(zip(mult, dts)):
            dB = z.reshape(len(paths), steps // m, m, spec.n).sum(axis=2)
            euler[i] += np.abs(euler_paths(spec, dB, dt, phi0)[:, -1] - ref).sum()
            flow[i] += np.abs(phi_flow(spec, X[:, ::m], times[::m], phi0)[:, -1] - ref).sum()
    return StrongErrors(dts, flow / n_paths, euler / n_paths, n_paths)
