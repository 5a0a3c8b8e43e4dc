import math

import numpy as np
import pytest

from quickdetect import rng, simulate as S
from quickdetect.model import ProblemSpec, build_general_family


def test_nochange_mean_zero(fig1):
    ens = S.simulate_paths(fig1, S.ScenarioConfig(S.NO_CHANGE), 1.0, 0.01, 4000, 1)
    x = ens.X[:, -1, :]
    se = x.std(axis=0, ddof=1) / math.sqrt(len(x))
    assert np.all(np.abs(x.mean(axis=0)) < 3 * se)
    assert np.all(np.isinf(ens.theta)) and np.all(ens.beta == -1)
    np.testing.assert_allclose(np.diff(ens.X, axis=1), ens.dB, rtol=0, atol=1e-13)


def test_immediate_change_slope(fig1):
    scen = S.ScenarioConfig(S.PRIOR, pi0=1.0, beta=1)
    ens = S.simulate_paths(fig1, scen, 1.0, 0.01, 4000, 2)
    assert np.all(ens.theta == 0) and np.all(ens.beta == 0)
    slope = ens.X[:, -1, 0]
    se = slope.std(ddof=1) / math.sqrt(len(slope))
    assert abs(slope.mean() - fig1.mu) < 3 * se
    assert abs(ens.X[:, -1, 2].mean()) < 3 * se  # coordinate 3 is not in (1,2)
    assert np.all(ens.pi == 1.0)


def test_prior_change_time_law(fig1):
    pi = 0.25
    theta, beta = S.draw_scenarios(fig1, S.ScenarioConfig(pi0=pi), 20000, 3)
    for t in (0.0, 0.5, 1.0, 2.0):
        emp = np.mean(theta > t)
        exact = (1 - pi) * math.exp(-fig1.lam * t)
        assert abs(emp - exact) < 3 * math.sqrt(exact * (1 - exact) / len(theta))
    counts = np.bincount(beta, minlength=3) / len(beta)
    assert np.all(np.abs(counts - 1 / 3) < 3 * math.sqrt(2 / 9 / len(beta)))


def test_scenario_validation(fig1):
    with pytest.raises(ValueError):
        S.ScenarioConfig(measure="sometimes")
    with pytest.raises(ValueError):
        S.ScenarioConfig(theta=-1.0)
    with pytest.raises(ValueError):
        S.simulate_paths(fig1, S.ScenarioConfig(beta=4), 1.0, 0.1, 2, 0)
    with pytest.raises(ValueError):
        S.simulate_paths(fig1, S.ScenarioConfig(), 0.01, 0.1, 2, 0)


def test_likelihood(fig1):
    assert S.likelihood(fig1, [0, 0, 0], 1, 1.0) == pytest.approx(math.exp(-1))
    assert S.likelihood(fig1, [0.5, 0.5, 9.0], 1, 1.0) == pytest.approx(1.0)
    assert S.likelihood(fig1, [0.3, -2.0, 1.0], 3, 0.0) == pytest.approx(math.exp(-1.0))
    assert S.likelihood(fig1, [0, 0, 0], 2, 0.0) == 1.0


def test_flow_start_and_deterministic_path(fig1, mixed_spec):
    times = np.linspace(0, 0.1, 101)
    X = np.zeros((101, 3))
    phi = S.phi_flow(fig1, X, times, 0.0)
    assert np.all(phi[0] == 0.0)
    # growth rate is zero for Figure-1, so Phi = lam t exactly
    np.testing.assert_allclose(phi[:, 0], fig1.lam * times, rtol=0, atol=1e-15)
    phim = S.phi_flow(mixed_spec, X, times, 0.0)
    np.testing.assert_allclose(phim[-1], mixed_spec.lam * 0.1, rtol=0.1)
    assert np.max(np.abs(phim[1:11] - times[1:11, None])) < times[10] ** 2
    start = np.array([0.2, 0.4, 0.6])
    np.testing.assert_array_equal(S.phi_flow(fig1, X, times, start)[0], start)


def test_flow_matches_closed_form_ode(fig1):
    # with X = 0 and a = 0 the flow solves dPhi = lam (1 + Phi) dt minus the k mu^2/2 damping
    times = np.linspace(0, 1, 2001)
    spec = ProblemSpec(2, 1.0, 1.0, 1.0, 0.0, build_general_family(2, {(1,): 1.0}))
    X = np.zeros((len(times), 2))
    phi = S.phi_flow(spec, X, times, 0.5)[:, 0]
    a = spec.growth[0]
    exact = np.exp(a * times) * (0.5 + spec.lam * (1 - np.exp(-a * times)) / a)
    np.testing.assert_allclose(phi, exact, rtol=1e-7)


def test_euler_step_examples(fig1):
    np.testing.assert_allclose(S.euler_step(fig1, np.zeros(3), np.zeros(3), 0.01), fig1.lam * 0.01)
    spec = ProblemSpec(2, 1.0, 1.0, 1.0, 0.0, build_general_family(2, {(1,): 1.0}))
    dt = 1e-4
    phi = np.array([0.3])
    for _ in range(int(1 / dt)):
        phi = phi + spec.lam * (1 + phi) * dt
    assert phi[0] == pytest.approx((1 + 0.3) * math.exp(1) - 1, abs=1e-3)
    assert np.all(S.euler_step(fig1, np.ones(3), np.full(3, -5.0), 0.01) == 0.0)


def test_euler_shared_indices_identical():
    fam = build_general_family(3, {(1, 2): 0.5, (1, 2, 3): 0.5})
    spec = ProblemSpec(3, 1.0, 1.0, 1.0, 0.0, fam)
    dB = rng.normals(0, range(5), 50, 3) * 0.1
    dB[..., 2] = 0.0  # coordinate 3 silent: subsets (1,2) and (1,2,3) see the same noise
    out = S.euler_paths(spec, dB, 0.01, 0.5)
    np.testing.assert_array_equal(out[..., 0], out[..., 1])


def test_posterior_identity(fig1):
    pi = 0.3
    assert S.posterior_from_phi(np.full(3, pi / (1 - pi)), fig1.p) == pytest.approx(pi)
    assert S.posterior_from_phi(np.zeros(3), fig1.p) == 0.0
    assert S.posterior_from_phi(np.array([1e12, 0, 0]), fig1.p) == pytest.approx(1.0)
    assert S.posterior_from_phi(np.array([np.inf, 0, 0]), fig1.p) == 1.0


def test_posterior_equals_bayes_at_start(fig1):
    ens = S.simulate_paths(fig1.with_pi0(0.4), S.ScenarioConfig(), 0.1, 0.05, 3, 0)
    np.testing.assert_allclose(ens.pi[:, 0], 0.4)


def test_phi_nonnegative(fig1):
    ens = S.simulate_paths(fig1, S.ScenarioConfig(), 2.0, 0.01, 200, 5)
    assert np.all(ens.phi >= 0)


def test_posterior_matches_direct_bayes(fig1):
    """Pi from Phi agrees with Bayes' rule over (theta, beta) on a discretised path."""
    pi0, dt = 0.2, 1e-3
    ens = S.simulate_paths(fig1, S.ScenarioConfig(pi0=pi0), 0.5, dt, 1, 9)
    X, times = ens.X[0], ens.times
    j = len(times) - 1
    t = times[j]
    # P(theta > t | X) vs changes in [0, t], integrated numerically over s
    post_no = (1 - pi0) * math.exp(-fig1.lam * t)
    mass = 0.0
    for i in range(fig1.N):
        m = fig1.family.members(i)
        W = X[:, m].sum(axis=1)
        k = len(m)
        # likelihood of a change at s: exp(mu (W_t - W_s) - k mu^2 (t - s) / 2)
        lr = np.exp(fig1.mu * (W[j] - W[: j + 1]) - 0.5 * k * fig1.mu**2 * (t - times[: j + 1]))
        dens = (1 - pi0) * fig1.lam * np.exp(-fig1.lam * times[: j + 1])
        integ = np.sum(0.5 * (lr[1:] * dens[1:] + lr[:-1] * dens[:-1]) * dt)
        mass += fig1.p[i] * (pi0 * lr[0] + integ)
    assert ens.pi[0, j] == pytest.approx(mass / (mass + post_no), rel=1e-4)


def test_martingale_small(fig1):
    ens = S.simulate_paths(fig1.with_pi0(0.25), S.ScenarioConfig(), 2.0, 0.01, 4000, 11)
    vals = []
    for t in (0.25, 0.5, 1.0, 2.0):
        j = int(round(t / 0.01))
        m = math.exp(fig1.lam * t) * (1 - ens.pi[:, j])
        vals.append((m.mean(), m.std(ddof=1) / math.sqrt(len(m))))
    base = 0.75
    for v, se in vals:
        assert abs(v - base) < 3 * se + 1e-3


def test_transience():
    spec = ProblemSpec(2, 1.0, 1.0, 1.0, 0.0, build_general_family(2, {(1,): 1.0}))  # lam > mu^2/2
    ens = S.simulate_paths(spec, S.ScenarioConfig(S.NO_CHANGE), 20.0, 0.05, 200, 4)
    assert np.median(ens.phi[:, -1, 0]) > 100 * np.median(ens.phi[:, 40, 0])


def test_ensemble_independent_of_batching(fig1):
    a = rng.normals(7, range(10), 20, 3)
    b = np.concatenate([rng.normals(7, range(0, 4), 20, 3), rng.normals(7, range(4, 10), 20, 3)])
    np.testing.assert_array_equal(a, b)
    e1 = S.simulate_paths(fig1, S.ScenarioConfig(), 0.5, 0.01, 8, 3)
    e2 = S.simulate_paths(fig1, S.ScenarioConfig(), 0.5, 0.01, 8, 3)
    np.testing.assert_array_equal(e1.phi, e2.phi)
    np.testing.assert_array_equal(e1.theta, e2.theta)


def test_streams_distinct():
    assert not np.array_equal(rng.normals(0, [0], 5, 2, rng.STREAM_PATHS), rng.normals(0, [0], 5, 2, rng.STREAM_KERNEL))


def test_flow_coefficients_affine(fig1):
    A, B = S.flow_coefficients(fig1, [0.5, 1.0], 50, 0)
    assert A.shape == (2, 50, 3)
    dt = 5e-3
    grid = np.linspace(0, 1.0, 201)
    z = rng.normals(0, range(50), 200, 3, rng.STREAM_KERNEL) * math.sqrt(dt)
    X = np.concatenate([np.zeros((50, 1, 3)), np.cumsum(z, axis=1)], axis=1)
    start = np.array([0.3, 1.0, 2.0])
    phi = S.phi_flow(fig1, X, grid, start)
    np.testing.assert_allclose(A[1] * start + B[1], phi[:, -1], rtol=1e-10)
    np.testing.assert_allclose(A[0] * start + B[0], phi[:, 100], rtol=1e-10)


def test_strong_errors_small(fig1):
    res = S.strong_errors(fig1, n_paths=500, seed=1)
    assert np.all(np.diff(res.flow) < 0) and np.all(np.diff(res.euler) < 0)
    assert np.all(res.flow < res.euler)
