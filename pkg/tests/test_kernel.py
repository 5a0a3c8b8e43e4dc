import math

import numpy as np
import pytest

from quickdetect import detect, kernel
from quickdetect.model import ProblemSpec, build_family, build_general_family


def test_running_cost(fig1):
    assert kernel.running_cost(fig1.p, 1, 1, [1, 1, 1]) == pytest.approx(0.0, abs=1e-15)
    assert kernel.running_cost(fig1.p, 1, 1, [0, 0, 0]) == -1.0
    assert kernel.running_cost(fig1.p, 1, 1, [3, 0, 0]) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(kernel.DomainError):
        kernel.running_cost(fig1.p, 1, 1, [1, -0.1, 1])


def gl_nested(phi, kappa, lam=1.0, panels=200, order=10):
    """Composite Gauss-Legendre on both integrals; the inner one is graded toward u = v."""
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, 1.0, panels + 1)
    h = np.diff(edges)[:, None] / 2
    s = ((edges[1:] + edges[:-1])[:, None] / 2 + h * x).ravel()
    ws = (h * w).ravel()
    vmax = phi / (1 + phi)
    v, wv = vmax * s, vmax * ws
    t, wt = 1 - (1 - s) ** 2, 2 * (1 - s) * ws
    u = v[:, None] * t[None, :]
    logw = ((kappa - 1) * np.log(u) - kappa / u - (kappa + 2) * np.log1p(-u)
            + kappa * (np.log1p(-v) - np.log(v))[:, None] + (kappa / v)[:, None])
    inner = (np.exp(logw) * wt[None, :]).sum(axis=1) * v
    return kappa / lam * (1 + phi) * float(inner @ wv)


def test_mayer_zero():
    assert kernel.mayer_one(0.0, 2.0) == 0.0


def test_mayer_against_fixed_order_oracle():
    assert kernel.mayer_one(1.0, 2.0, 1e-10) == pytest.approx(gl_nested(1.0, 2.0), rel=1e-9, abs=1e-10)
    assert kernel.mayer_one(3.0, 0.7, 1e-10) == pytest.approx(gl_nested(3.0, 0.7), rel=1e-8)


@pytest.mark.parametrize("phi", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("kappa", [0.5, 1.0, 2.0])
def test_mayer_ode_residual(phi, kappa):
    lam = 1.0
    h = 1e-3
    m = [kernel.mayer_one(phi + s * h, kappa, 1e-12) for s in (-1, 0, 1)]
    d1 = (m[2] - m[0]) / (2 * h)
    d2 = (m[2] - 2 * m[1] + m[0]) / h**2
    # (lam/kappa) plays the role of mu_eff^2 / 2
    res = lam * (1 + phi) * d1 + (lam / kappa) * phi**2 * d2 - lam * m[1] - phi
    assert abs(res) < 1e-5


def test_mayer_convex_increasing():
    xs = np.linspace(0, 10, 41)
    m = np.array([kernel.mayer_one(x, 1.0) for x in xs])
    assert np.all(np.diff(m) > 0)
    assert np.all(np.diff(m, 2) >= -1e-6)


def test_mayer_domain():
    with pytest.raises(kernel.DomainError):
        kernel.mayer_one(-1.0, 1.0)


def test_mayer_full_reductions(fig1):
    assert kernel.mayer_full(fig1, [0, 0, 0]) == 1.0 / fig1.c
    single = ProblemSpec(3, 1.0, 1.0, 2.0, 0.0, build_general_family(3, {(1, 2): 1.0}))
    assert kernel.mayer_full(single, [1.5]) == pytest.approx(kernel.mayer_one(1.5, 1.0) + 0.5)


def generator_residual(spec, phi, h=2e-3):
    """L_Phi M - lam M - (sum p phi - lam/c) by central differences."""
    phi = np.asarray(phi, dtype=float)
    N = spec.N
    M = lambda x: kernel.mayer_full(spec, x, 1e-12)  # noqa: E731
    m0 = M(phi)
    grad = np.zeros(N)
    hess = np.zeros((N, N))
    E = np.eye(N) * h
    for i in range(N):
        grad[i] = (M(phi + E[i]) - M(phi - E[i])) / (2 * h)
        hess[i, i] = (M(phi + E[i]) - 2 * m0 + M(phi - E[i])) / h**2
        for j in range(i + 1, N):
            hess[i, j] = hess[j, i] = (M(phi + E[i] + E[j]) - M(phi + E[i] - E[j]) - M(phi - E[i] + E[j])
                                       + M(phi - E[i] - E[j])) / (4 * h * h)
    ov = spec.family.overlap_matrix()
    gen = spec.lam * (1 + phi) @ grad + 0.5 * spec.mu**2 * np.sum(ov * np.outer(phi, phi) * hess)
    return gen - spec.lam * m0 - (spec.p @ phi - spec.lam / spec.c)


@pytest.mark.parametrize("point", [[0.5, 1.0, 2.0], [1.0, 1.0, 1.0]])
def test_generator_identity(fig1, mixed_spec, point):
    assert abs(generator_residual(fig1, point)) < 1e-4
    assert abs(generator_residual(mixed_spec, point)) < 1e-4


def test_literal_convention_fails_generator_identity(fig1):
    # the unscaled kappa does not solve the k=2 generator equation
    spec = fig1
    orig = kernel.coordinate_kappa
    try:
        kernel.coordinate_kappa = lambda s, literal=False: orig(s, True)
        assert abs(generator_residual(spec, [1.0, 1.0, 1.0])) > 1e-2
    finally:
        kernel.coordinate_kappa = orig


def test_phi_star_above_lower_and_monotone_lhs():
    root = kernel.phi_star_root(2.0, 0.5)
    assert root > 1.0
    xs = np.linspace(1.0, root * 1.5, 100)
    lhs = np.array([kernel.stopping_lhs(x, 2.0) for x in xs])
    assert np.all(np.diff(lhs) > 0)
    assert kernel.stopping_lhs(root, 2.0) == pytest.approx(0.5, rel=1e-9)


def test_phi_star_comparative_statics():
    kappas = [0.5, 1.0, 1.5, 2.0, 3.0]
    rhss = [0.3, 0.5, 0.8, 1.2, 2.0]
    R = np.array([[kernel.phi_star_root(k, r) for r in rhss] for k in kappas])
    assert np.all(np.diff(R, axis=0) > 0)
    # the lower end kappa*rhs moves too, so compare against the implied lam/c ordering
    assert np.all(np.diff(R / np.array(kappas)[:, None], axis=1) > 0)


def test_phi_star_bad_input():
    with pytest.raises(kernel.DomainError):
        kernel.phi_star_root(0.0, 1.0)


def test_phi_star_all_properties(fig1, mixed_spec):
    ps = kernel.phi_star_all(fig1)
    assert np.all(ps > fig1.lam / (fig1.p * fig1.c))
    assert ps[0] == ps[1] == ps[2]
    assert ps[0] == pytest.approx(5.28982376, rel=1e-8)
    pm = kernel.phi_star_all(mixed_spec)
    assert np.all(pm > mixed_spec.lam / (mixed_spec.p * mixed_spec.c))
    dearer = kernel.phi_star_all(ProblemSpec(3, 1.0, 1.0, 2.0, 0.0, fig1.family))
    assert np.all(dearer < ps)


def test_known_roots():
    single = ProblemSpec(3, 1.0, 1.0, 1.0, 0.0, build_general_family(3, {(1, 2): 1.0}))
    assert kernel.phi_star_all(single)[0] == pytest.approx(1.51534035, rel=1e-8)
    pair = ProblemSpec(2, 1.0, 1.0, 1.0, 0.0, build_family(2, 1, [0.5, 0.5]))
    assert kernel.phi_star_all(pair)[0] == pytest.approx(2.67215547, rel=1e-8)


def test_quadrature_stable_under_budget():
    a = kernel._quad(lambda u: math.exp(kernel._log_weight(u, 0.6, 1.3)), 1e-9, 0.6, 0.0, 1e-12, limit=200)
    b = kernel._quad(lambda u: math.exp(kernel._log_weight(u, 0.6, 1.3)), 1e-9, 0.6, 0.0, 1e-12, limit=400)
    assert abs(a - b) < 1e-10


def test_bound_planes(fig1):
    ps = kernel.phi_star_all(fig1)
    planes = kernel.bound_surfaces(fig1, ps)
    assert planes.lower(np.zeros(2)) == pytest.approx(fig1.lam / (fig1.p[-1] * fig1.c))
    assert planes.upper(np.zeros(2)) == pytest.approx(ps[-1])
    assert planes.lower_intercept < planes.upper_intercept
    g = np.linspace(0, 1, 41)
    X = np.stack(np.meshgrid(g * planes.upper_box[0], g * planes.upper_box[1]), -1).reshape(-1, 2)
    assert np.all(planes.upper(X) >= planes.lower(X) - 1e-12)
    assert np.all(planes.upper(X) >= 0)


def test_phi_star_matches_threshold_sweep():
    """Brute-force 1-d stopping: the best threshold of a simulated sweep sits at the root."""
    spec = ProblemSpec(2, 1.0, 1.0, 1.0, 0.0, build_general_family(2, {(1,): 1.0}))
    root = kernel.phi_star_root(2.0, 0.5)
    assert kernel.phi_star_all(spec)[0] == pytest.approx(root)
    thr = np.linspace(0.4 * root, 1.8 * root, 200)
    res = detect.evaluate_thresholds(spec, thr, horizon=40.0, n_paths=20000, seed=3)
    risk = np.array([r.risk.value for r in res])
    # smooth the sweep by a quadratic through the bottom of the curve
    near = risk <= risk.min() + 0.02
    a, b, _ = np.polyfit(thr[near], risk[near], 2)
    best = -b / (2 * a)
    assert abs(best - root) < 0.05 * root
