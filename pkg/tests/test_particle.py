import numpy as np
import pytest
from scipy import stats

from vsm import noise
from vsm.errors import ConfigError, NumericalError
from vsm.params import ModelParams
from vsm.particle import (PathEnsemble, empirical_measure_at, log_mean_law, sample_initial,
                          simulate_particles, simulate_replications, step_milstein)


def test_step_deterministic_euler_drift():
    p = ModelParams(0.0, 1.0, gamma=0.0, n_particles=2)
    out = step_milstein([1.0, 1.0], p, [0.0, 0.0], 0.0, 0.01)
    assert np.array_equal(out, [1.01, 1.01])


def test_step_matches_formula():
    p = ModelParams(2.0, 1.5, gamma=0.8, n_particles=3)
    x = np.array([0.5, 1.0, 2.0])
    dw = np.array([0.1, -0.05, 0.02])
    w0, dt = 0.03, 0.01
    s = x.sum()
    c = 0.8 * np.sqrt(1 - 2 / 3)
    exp = (x + 1.5 * s / 3 * dt + np.sqrt(2 / 3) * np.sqrt(x * s) * dw + c * x * w0
           + 2 / 12 * s * (dw**2 - dt) + 0.5 * c**2 * x * (w0**2 - dt))
    assert np.allclose(step_milstein(x, p, dw, w0, dt), exp, rtol=1e-14)
    euler = x + 1.5 * s / 3 * dt + np.sqrt(2 / 3) * np.sqrt(x * s) * dw + c * x * w0
    assert np.allclose(step_milstein(x, p, dw, w0, dt, scheme="euler"), euler, rtol=1e-14)


def test_step_homogeneity():
    rng = np.random.default_rng(0)
    p = ModelParams(2.0, 1.0, n_particles=50)
    x = rng.chisquare(3, 50)
    dw = rng.normal(0, 0.1, 50)
    a = step_milstein(3.7 * x, p, dw, 0.05, 0.01)
    b = 3.7 * step_milstein(x, p, dw, 0.05, 0.01)
    assert np.max(np.abs(a - b) / np.abs(b)) < 1e-12


def test_step_positivity_random():
    rng = np.random.default_rng(1)
    p = ModelParams(2.0, 1.0, n_particles=20)
    x = rng.chisquare(3, 20)
    for _ in range(10_000):
        dt = rng.uniform(1e-4, 0.5)
        x = step_milstein(x, p, rng.normal(0, np.sqrt(dt) * 3, 20), rng.normal(0, np.sqrt(dt) * 3), dt)
        assert (x >= 0).all()
        if x.sum() == 0 or x.sum() > 1e100:
            x = rng.chisquare(3, 20)


def test_step_errors():
    p = ModelParams(1.0, 1.0, n_particles=2)
    with pytest.raises(NumericalError):
        step_milstein([1.0, np.nan], p, [0, 0], 0.0, 0.1, step=4)
    with pytest.raises(NumericalError, match="step 4"):
        step_milstein([1.0, 1.0], p, [np.inf, 0], 0.0, 0.1, step=4)
    with pytest.raises(ConfigError):
        step_milstein([1.0, 1.0], p, [0, 0], 0.0, 0.0)
    with pytest.raises(ConfigError):
        step_milstein([1.0, -1.0], p, [0, 0], 0.0, 0.1)


def test_gbm_strong_order():
    # N = 1, alpha = 0: X is a GBM driven by W0 alone
    beta, T, fine, paths = 1.0, 1.0, 512, 200
    dw = noise.common_increments(2, np.arange(paths), fine, T / fine)
    exact = np.exp((beta - 0.5) * T + dw.sum(axis=1))
    errs = []
    for n in (64, 128, 256):
        inc = dw.reshape(paths, n, fine // n).sum(axis=2)
        p = ModelParams(0.0, beta, n_particles=1, horizon=T, n_steps=n)
        x = np.ones((paths, 1))
        for k in range(n):
            x = step_milstein(x, p, np.zeros((paths, 1)), inc[:, k], p.dt)
        errs.append(np.abs(x[:, 0] - exact).mean())
    order = np.polyfit(np.log([64, 128, 256]), np.log(errs), 1)[0]
    assert order < -0.8


def _plan(p, seed=3, rep=0):
    return noise.make_noise_plan(seed, p.n_steps, p.dt, p.n_particles, replication=rep)


def test_reference_configuration_runs():
    p = ModelParams(2.0, 1.0, n_particles=400, horizon=1.0, n_steps=270)
    init = sample_initial("chi2", 400, 0, k=3)
    ens = simulate_particles(p, _plan(p), init)
    assert ens.states.shape == (400, 271)
    assert (ens.states >= 0).all()
    assert np.allclose(ens.total_mean, ens.states.mean(axis=0), rtol=1e-12, atol=0)


def test_symmetric_deterministic_paths_coincide():
    p = ModelParams(0.0, 1.0, gamma=0.0, n_particles=5, n_steps=20)
    ens = simulate_particles(p, _plan(p), np.full(5, 2.0))
    assert np.all(ens.states == ens.states[0])


def test_permutation_equivariance_bit_exact():
    p = ModelParams(2.0, 1.0, n_particles=30, n_steps=100)
    init = sample_initial("lognormal", 30, 5)
    perm = np.random.default_rng(0).permutation(30)
    plan = _plan(p)
    a = simulate_particles(p, plan, init)
    b = simulate_particles(p, plan, init[perm], streams=perm)
    assert np.array_equal(b.states, a.states[perm])


def test_replications_match_single_runs_and_workers():
    p = ModelParams(2.0, 1.0, n_particles=7, n_steps=40)
    init = np.linspace(0.5, 2.0, 7)
    res = simulate_replications(p, 11, init, [0, 3, 4], keep_states=True)
    for i, r in enumerate([0, 3, 4]):
        single = simulate_particles(p, _plan(p, 11, r), init)
        assert np.array_equal(res.states[i], single.states)
    other = simulate_replications(p, 11, init, [0, 3, 4], keep_states=True, workers=3, batch_size=1)
    assert np.array_equal(other.states, res.states)
    assert np.array_equal(other.total_mean, res.total_mean)


def test_common_increment_override():
    p = ModelParams(2.0, 1.0, n_particles=5, n_steps=10)
    dw0 = noise.common_increments(1, [9], 10, p.dt)[0]
    a = simulate_replications(p, 1, np.ones(5), [0, 1], common_increments=dw0)
    b = simulate_replications(p, 1, np.ones(5), [9])
    # idiosyncratic streams differ, the common path is the one of replication 9
    assert not np.array_equal(a.final_states[0], a.final_states[1])
    with pytest.raises(ConfigError):
        simulate_replications(p, 1, np.ones(5), [0, 1], common_increments=np.zeros((3, 10)))
    assert b.final_states.shape == (1, 5)


def test_simulate_errors():
    p = ModelParams(2.0, 1.0, n_particles=4, n_steps=10)
    with pytest.raises(ConfigError):
        simulate_particles(p, _plan(p), np.ones(3))
    with pytest.raises(ConfigError):
        simulate_particles(p, _plan(p), np.array([1.0, 0.0, 1.0, 1.0]))
    with pytest.raises(ConfigError):
        simulate_particles(p.replace(n_steps=11), _plan(p), np.ones(4))


def test_log_mean_law_examples():
    assert log_mean_law(ModelParams(1.0, 1.0, n_particles=2), 0.0, 1.0) == (0.0, 0.0)
    assert log_mean_law(ModelParams(1.0, 0.5, n_particles=2), 2.0, 3.0) == (0.0, 2.0)
    assert log_mean_law(ModelParams(2.0, 1.0, n_particles=2), 1.0, 1.0) == (0.5, 1.0)
    with pytest.raises(ConfigError):
        log_mean_law(ModelParams(1.0, 1.0, gamma=0.5, n_particles=2), 1.0, 1.0)
    with pytest.raises(ConfigError):
        log_mean_law(ModelParams(1.0, 1.0, n_particles=2), -1.0, 1.0)


def test_empirical_measure_at():
    ens = PathEnsemble(np.array([0.0, 1.0]), np.array([[1.0, 3.0], [1.0, 1.0], [1.0, 2.0]]),
                       np.array([1.0, 2.0]))
    m = empirical_measure_at(ens, 1)
    assert m.atoms.tolist() == [1.0, 2.0, 3.0]
    assert np.allclose(m.weights, 1 / 3)
    assert m.mean() == pytest.approx(ens.total_mean[1], rel=1e-12)
    one = PathEnsemble(np.array([0.0]), np.array([[4.0]]), np.array([4.0]))
    assert empirical_measure_at(one, 0).weights.tolist() == [1.0]
    with pytest.raises(ConfigError):
        empirical_measure_at(ens, 2)


def test_sample_initial():
    x = sample_initial("chi2", 5000, 1, k=3)
    assert np.array_equal(x, sample_initial("chi2", 5000, 1, k=3))
    assert stats.kstest(x, stats.chi2(3).cdf).pvalue > 1e-3
    assert np.all(sample_initial("constant", 4, 0, value=2.5) == 2.5)
    assert (sample_initial("lognormal", 100, 0) > 0).all()
    with pytest.raises(ConfigError):
        sample_initial("pareto", 3, 0)
