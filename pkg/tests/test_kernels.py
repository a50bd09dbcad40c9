import math

import numpy as np
import pytest
from scipy import integrate

from cwgap import oracle
from cwgap.errors import ConfigError, UsageError
from cwgap.estimators import batch_means_variance
from cwgap.gaussian_target import GaussianTarget, correlated_pair, cs_target
from cwgap.kernels import (GibbsKernel, HybridRWMKernel, MalaConfig, MalaKernel, StdMalaKernel,
                           density_view, gibbs_block_step, hybrid_rwm_log_alpha, hybrid_rwm_step,
                           kernels_from_spec, mala_block_step, mala_log_ratio,
                           standardized_mala_step, std_mala_log_alpha)
from cwgap.linalg import sym_sqrt
from cwgap.rng import RngStream, derive_stream
from cwgap.scans import ScanSchedule, run_chain


def within(est, want, se, k=4.0):
    return abs(est - want) <= k * se


def test_gibbs_diagonal_target_mean():
    t = GaussianTarget([1.0, -3.0], np.diag([4.0, 0.25]), [1, 1])
    run = run_chain(t, [GibbsKernel()] * 2, ScanSchedule.deterministic([0, 1]), 10 ** 5, 0,
                    ["x0", "x1"], derive_stream(1, 0))
    for k, sd in enumerate((0.5, 2.0)):
        assert within(run.samples[:, k].mean(), t.mu[k], sd / math.sqrt(10 ** 5))


def test_gibbs_conditional_draws():
    t = correlated_pair(0.5)
    rng = derive_stream(2, 0)
    x = np.array([0.0, 2.0])
    draws = np.array([gibbs_block_step(t, 0, x, rng)[0] for _ in range(10 ** 5)])
    n = draws.size
    assert within(draws.mean(), 1.0, math.sqrt(0.75 / n))
    assert within(draws.var(), 0.75, 0.75 * math.sqrt(2 / n))


@pytest.mark.parametrize("kernel", [GibbsKernel(), MalaKernel([0.3, 0.3, 0.3]),
                                    StdMalaKernel([0.2, 0.2, 0.2])])
def test_kernels_touch_only_their_block(kernel):
    t = cs_target(6, 2, 0.4)
    rng = derive_stream(3, 0)
    x = t.sample(rng)
    for j in range(t.d):
        for _ in range(20):
            y, _ = kernel.step(t, j, x, rng)
            mask = np.ones(6, bool)
            mask[t.blocks.slice(j)] = False
            assert np.array_equal(y[mask], x[mask])
            x = y


def test_mala_identity_proposal():
    t = cs_target(4, 2, 0.5)
    x = np.array([0.3, -1.0, 2.0, 0.1])
    assert mala_log_ratio(t, MalaConfig((0.2, 0.2)), 1, x, x[2:]) == 0.0


def test_mala_stationarity_1d():
    t = GaussianTarget([0.0], [[1.0]], [1])
    run = run_chain(t, [MalaKernel([0.2])], ScanSchedule.deterministic([0]), 10 ** 6, 0,
                    ["x0", "x0^2"], derive_stream(4, 0))
    m = batch_means_variance(run.samples[:, 0])
    v = batch_means_variance(run.samples[:, 1])
    n = run.samples.shape[0]
    assert within(run.samples[:, 0].mean(), 0.0, math.sqrt(m.sigma2_hat / n))
    assert within(run.samples[:, 1].mean(), 1.0, math.sqrt(v.sigma2_hat / n))


def test_mala_ratio_equals_standardized_form():
    t = cs_target(4, 2, 0.5, mu=[0.5, -0.5, 1.0, 0.0])
    h = 0.15
    cfg = MalaConfig((h, h))
    g = np.random.default_rng(5)
    for j in range(2):
        sl = t.blocks.slice(j)
        Qjj = t.Q[sl, sl]
        R = sym_sqrt(Qjj)
        for _ in range(50):
            x = g.normal(size=4) * 1.5
            yb = g.normal(size=2) * 1.5
            m = t.conditional_mean(j, x)
            X, Y = R @ (x[sl] - m), R @ (yb - m)
            lr = mala_log_ratio(t, cfg, j, x, yb)
            assert abs(min(0.0, lr) - std_mala_log_alpha(h * Qjj, X, Y)) <= 1e-10


@pytest.mark.parametrize("t", [correlated_pair(0.6), cs_target(4, 2, 0.3)])
def test_mala_step_matches_reference_ratio(t):
    """Replays the step's draws and checks the accept decision against the
    full-density reference ratio."""
    cfg = MalaConfig((0.4,) * t.d)
    rng = derive_stream(6, 0)
    x = t.sample(rng)
    for k in range(400):
        j = k % t.d
        sl = t.blocks.slice(j)
        replay = RngStream.from_state(rng.get_state())
        y, acc = mala_block_step(t, cfg, j, x, rng)
        m = t.conditional_mean(j, x)
        h = cfg.step_sizes[j]
        z = replay.normals(sl.stop - sl.start)
        prop = x[sl] + h * (-t.cache[j].Qjj @ (x[sl] - m)) + math.sqrt(2 * h) * z
        u = replay.next_uniform()
        want = u == 0 or math.log(u) < mala_log_ratio(t, cfg, j, x, prop)
        assert acc == want
        if acc:
            assert np.allclose(y[sl], prop, atol=1e-12)
        x = y


def test_std_mala_examples():
    assert math.exp(std_mala_log_alpha(0.2, 1.0, 0.5)) == 1.0
    assert math.exp(std_mala_log_alpha(0.2, 0.5, 1.0)) == pytest.approx(math.exp(-0.0375), rel=1e-14)
    assert round(math.exp(std_mala_log_alpha(0.2, 0.5, 1.0)), 5) == 0.96319
    assert std_mala_log_alpha(np.eye(2) * 0.3, [1.0, 2.0], [1.0, 2.0]) == 0.0


def test_std_mala_scalar_and_matrix_paths_agree():
    a, b = derive_stream(7, 0), derive_stream(7, 0)
    x, X = 0.4, np.array([0.4])
    for _ in range(200):
        x, acc1 = standardized_mala_step(0.3, x, a)
        X, acc2 = standardized_mala_step([[0.3]], X, b)
        assert acc1 == acc2 and abs(x - X[0]) < 1e-13


def test_std_mala_rejects_bad_delta():
    with pytest.raises(UsageError):
        standardized_mala_step(-0.1, 0.0, derive_stream(0, 0))
    with pytest.raises(UsageError):
        standardized_mala_step([[0.2, 0.0], [0.0, -0.1]], np.zeros(2), derive_stream(0, 0))


def test_std_mala_acceptance_monotone_in_delta():
    rates = []
    for k in range(1, 11):
        rng = derive_stream(8, k)
        x = rng.next_std_normal()
        acc = 0
        for _ in range(10 ** 5):
            x, a = standardized_mala_step(0.05 * k, x, rng)
            acc += a
        rates.append(acc / 10 ** 5)
    assert all(b <= a for a, b in zip(rates, rates[1:])), rates


def test_hybrid_rwm_examples():
    assert hybrid_rwm_log_alpha(0.7, 0.7) == 0.0
    assert math.exp(hybrid_rwm_log_alpha(0.0, 2.0)) == pytest.approx(math.exp(-2), rel=1e-15)
    with pytest.raises(UsageError):
        hybrid_rwm_step(2, [0.0, 0.0], derive_stream(0, 0))


def test_hybrid_rwm_stationary_variance():
    t = GaussianTarget([0.0, 0.0], np.eye(2), [1, 1])
    run = run_chain(t, [HybridRWMKernel()] * 2, ScanSchedule.deterministic([0, 1]), 5 * 10 ** 5, 0,
                    ["x0^2"], derive_stream(9, 0))
    s = run.samples[:, 0]
    se = math.sqrt(batch_means_variance(s).sigma2_hat / s.size)
    assert within(s.mean(), 1.0, se)


def test_gibbs_view_is_conditional_density():
    t = correlated_pair(0.5)
    v = density_view("gibbs", target=t, j=0, x=np.array([0.0, 2.0]))
    ys = np.linspace(-3, 4, 9)
    dens = np.exp(-0.5 * (ys - 1.0) ** 2 / 0.75) / math.sqrt(2 * math.pi * 0.75)
    assert np.allclose(v.q(0.3, ys), dens, rtol=1e-13)
    assert np.all(v.alpha(0.3, ys) == 1.0)


def test_std_mala_view_proposal():
    v = density_view("std_mala", delta=0.2)
    ys = np.linspace(-2, 3, 11)
    dens = np.exp(-0.5 * (ys - 0.8) ** 2 / 0.4) / math.sqrt(2 * math.pi * 0.4)
    assert np.allclose(v.q(1.0, ys), dens, rtol=1e-13)


def _views():
    t = correlated_pair(0.5)
    return [density_view("gibbs", target=t, j=1, x=np.array([0.4, 0.0])),
            density_view("mala", target=t, j=0, x=np.array([0.0, 1.0]), h=0.3),
            density_view("std_mala", delta=0.25),
            density_view("hybrid_rwm", other=1.5)]


def test_views_accept_stay_put():
    for v in _views():
        xs = np.linspace(-3, 3, 13)
        assert np.all(v.alpha(xs, xs) == 1.0), v.name


def test_view_acceptance_matches_sampler():
    """MC acceptance frequency at fixed x agrees with the integral of q*alpha."""
    x = 0.9
    n = 10 ** 5
    cases = [
        (density_view("std_mala", delta=0.25), lambda r: standardized_mala_step(0.25, x, r)[1]),
        (density_view("hybrid_rwm", other=1.5),
         lambda r: hybrid_rwm_step(0, [x, 1.5], r)[0] != x),
    ]
    t = correlated_pair(0.5)
    cfg = MalaConfig((0.3, 0.3))
    cases.append((density_view("mala", target=t, j=0, x=np.array([x, 1.0]), h=0.3),
                  lambda r: mala_block_step(t, cfg, 0, np.array([x, 1.0]), r)[1]))
    for k, (view, step) in enumerate(cases):
        p, _ = integrate.quad(lambda y: view.q(x, y) * view.alpha(x, y), -np.inf, np.inf,
                              epsabs=1e-12, limit=200)
        rng = derive_stream(10, k)
        freq = sum(bool(step(rng)) for _ in range(n)) / n
        assert abs(freq - p) <= 3 * math.sqrt(p * (1 - p) / n), (view.name, freq, p)


def test_grid_kernels_reversible_and_projection_identities():
    grid = oracle.Grid.line(8.0, 401)
    for v in _views():
        if v.name in ("gibbs", "mala"):
            m = v.params["mean"]
            sd = math.sqrt(0.75)
            g = oracle.Grid.line(8.0 * sd, 401, m)
        else:
            g = grid
        K = oracle.discretize_mh_1d(v, g)
        assert K.detailed_balance_residual() <= 1e-8
        P = oracle.iid_kernel(K.pi)
        assert np.max(np.abs(K.P @ P.P - P.P)) <= 1e-8
        assert np.max(np.abs(P.P @ K.P - P.P)) <= 1e-8
        if v.name == "gibbs":
            assert np.max(np.abs(K.P - P.P)) <= 1e-8


def test_kernels_from_spec():
    t = cs_target(4, 2, 0.2)
    ks = kernels_from_spec({"kind": "mala", "step_sizes": 0.1}, t)
    assert ks[0].cfg.step_sizes == (0.1, 0.1)
    with pytest.raises(ConfigError):
        kernels_from_spec({"kind": "mala"}, t)
    with pytest.raises(ConfigError):
        kernels_from_spec({"kind": "hybrid_rwm"}, t)
    with pytest.raises(ConfigError):
        kernels_from_spec({"kind": "std_mala", "step_sizes": "recommended"}, t)
    with pytest.raises(ConfigError):
        MalaConfig((0.1, -0.2))
