"""Acceptance suite: nine criteria at their stated settings.

Each test prints one ``PASS``/``FAIL`` line. Run with ``pytest tests/test_acceptance.py``
or directly as ``python tests/test_acceptance.py``.
"""

import sys
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vsm import noise
from vsm.grid import Grid1D, GridDensity
from vsm.market import calibrate, diversity, entropy, synthetic_panel
from vsm.measure import EmpiricalMeasure, wasserstein1
from vsm.params import ModelParams
from vsm.particle import sample_initial, simulate_particles, step_milstein
from vsm.spde import assemble_operators, chi2_density, step_semi_implicit
from vsm.verify import (check_alpha_zero_order, check_chaos_decay, check_conditional_lln,
                        check_first_moment_tracking, check_mean_law, check_moment_identity,
                        check_spde_mkv_agreement, spde_moment_run)

pytestmark = pytest.mark.acceptance


def _report(capsys, number, title, passed, summary, t0):
    with capsys.disabled():
        print(f"\nACCEPTANCE {number} {'PASS' if passed else 'FAIL'} {title}: {summary} "
              f"[{time.perf_counter() - t0:.1f}s]")


def test_1_mean_law(capsys):
    t0 = time.perf_counter()
    reports = [check_mean_law(ModelParams(2.0, 1.0, 1.0, N, 1.0, 500), 2000, seed=11) for N in (10, 100, 400)]
    ok = all(r.passed for r in reports)
    ps = ", ".join(f"N={r.details['n_particles']} p={r.statistic:.3f}" for r in reports)
    _report(capsys, 1, "exact mean law (KS > 0.01)", ok, ps, t0)
    assert ok


def test_2_moment_identity(capsys):
    t0 = time.perf_counter()
    r = check_moment_identity(ModelParams(2.0, 1.0, 1.0, 10, 1.0, 500), [1, 2], 10_000, seed=2)
    zs = ", ".join(f"{k} z={r.details[k]['z']:.2f}" for k in ("p=1", "p=2"))
    _report(capsys, 2, "moment identity (within 3 SE)", r.passed, zs, t0)
    assert r.passed


def test_3_alpha_zero_oracle(capsys):
    t0 = time.perf_counter()
    r = check_alpha_zero_order(ModelParams(0.0, 1.0, 1.0, 1, 1.0, 400), seed=3, n_steps_list=(100, 200, 400),
                               outer=256, n_samples=64)
    _report(capsys, 3, "alpha=0 strong order (>= 0.9)", r.passed, f"order={r.statistic:.3f}", t0)
    assert r.passed


def test_4_conditional_lln(capsys):
    t0 = time.perf_counter()
    p = ModelParams(2.0, 1.0, 1.0, 10, 1.0, 50, m_lambda=1.0)
    r = check_conditional_lln(p, [100, 1000, 10_000], outer=100, seed=4, M_ref=100_000)
    _report(capsys, 4, "conditional LLN slope (-0.5 +- 0.1)", r.passed, f"slope={r.statistic:.3f}", t0)
    assert r.passed


def test_5_first_moment_tracking(capsys):
    t0 = time.perf_counter()
    run = spde_moment_run(ModelParams(2.0, 1.0, 1.0, 10, 1.0, 1000), seed=5, k=3, n_nodes=1000)
    r = check_first_moment_tracking(run)
    _report(capsys, 5, "SPDE first moment (< 2%, mass < 1e-3)", r.passed,
            f"deviation={r.statistic:.2e} mass_drift={r.details['mass_drift']:.2e}", t0)
    assert r.passed


def test_6_spde_mkv_agreement(capsys):
    t0 = time.perf_counter()
    r = check_spde_mkv_agreement(ModelParams(2.0, 1.0, 1.0, 10, 1.0, 270), seed=6, n_samples=100_000, k=3)
    _report(capsys, 6, "SPDE vs McKean-Vlasov W1 (<= 5% of mean)", r.passed,
            f"W1/mean={r.statistic:.4f}", t0)
    assert r.passed


def test_7_chaos_decay(capsys):
    t0 = time.perf_counter()
    p = ModelParams(2.0, 1.0, 1.0, 400, 1.0, 200, m_lambda=1.0)
    r = check_chaos_decay(p, [25, 100, 400], outer=40, seed=7, inner=100)
    vals = ", ".join(f"{v:.2e}" for v in r.details["values"])
    _report(capsys, 7, "propagation of chaos (decreasing, slope <= -0.3)", r.passed,
            f"values=[{vals}] slope={r.statistic:.3f}", t0)
    assert r.passed


# structural suite

def _positivity():
    p = ModelParams(2.0, 1.0, 1.0, 20, 1.0, 10_000)
    rng = np.random.default_rng(80)
    x = rng.chisquare(3, 20)
    for _ in range(p.n_steps):
        x = step_milstein(x, p, rng.normal(0, 3 * np.sqrt(p.dt), 20), rng.normal(0, 3 * np.sqrt(p.dt)), p.dt)
        if (x < 0).any():
            return False
    return True


def _homogeneity():
    p = ModelParams(2.0, 1.0, 1.0, 50, 1.0, 100)
    rng = np.random.default_rng(81)
    x = rng.chisquare(3, 50)
    dw = rng.normal(0, 0.1, 50)
    a = step_milstein(3.7 * x, p, dw, 0.05, 0.01)
    b = 3.7 * step_milstein(x, p, dw, 0.05, 0.01)
    return bool(np.max(np.abs(a - b) / np.abs(b)) <= 1e-12)


def _exchangeability():
    p = ModelParams(2.0, 1.0, 1.0, 30, 1.0, 100)
    init = sample_initial("lognormal", 30, 82)
    perm = np.random.default_rng(82).permutation(30)
    plan = noise.make_noise_plan(82, p.n_steps, p.dt, 30)
    a = simulate_particles(p, plan, init)
    b = simulate_particles(p, plan, init[perm], streams=perm)
    return bool(np.array_equal(b.states, a.states[perm]))


def _spde_linearity():
    grid = Grid1D(60.0, 600)
    a, b = chi2_density(3, grid), chi2_density(5, grid)
    ops = assemble_operators(grid)
    p = ModelParams(2.0, 1.0, 1.0, 10, 1.0, 50)
    dw = noise.common_increments(83, [0], 50, p.dt)[0]
    ok = True
    for scheme in ("em", "cn"):
        ua, ub, us = a, b, GridDensity(grid, 2.0 * a.values - 0.5 * b.values)
        for k in range(50):
            args = (ops, p, 3.0 * np.exp(0.1 * k * p.dt), dw[k], p.dt)
            ua = step_semi_implicit(ua, *args, scheme=scheme)
            ub = step_semi_implicit(ub, *args, scheme=scheme)
            us = step_semi_implicit(us, *args, scheme=scheme)
        comb = 2.0 * ua.values - 0.5 * ub.values
        ok &= bool(np.max(np.abs(us.values - comb)) <= 1e-12 * np.max(np.abs(comb)))
    return ok


_samples = st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=40)


@settings(max_examples=300, deadline=None, derandomize=True)
@given(_samples, _samples, _samples)
def _w1_axioms(a, b, c):
    mu, nu, la = (EmpiricalMeasure.from_samples(x) for x in (a, b, c))
    d = wasserstein1(mu, nu)
    assert d >= 0
    assert abs(d - wasserstein1(nu, mu)) <= 1e-12 * max(1.0, d)
    assert wasserstein1(mu, la) <= d + wasserstein1(nu, la) + 1e-9
    assert wasserstein1(mu, EmpiricalMeasure.from_samples(a)) == 0.0


def _w1():
    try:
        _w1_axioms()
    except AssertionError:
        return False
    return True


def _entropy_diversity():
    return bool(abs(entropy([0.5, 0.5]) - np.log(2)) < 1e-15 and abs(diversity([0.5, 0.5], 0.5) - 2.0) < 1e-14)


def test_8_structural_suite(capsys):
    t0 = time.perf_counter()
    parts = {"positivity": _positivity(), "homogeneity": _homogeneity(), "exchangeability": _exchangeability(),
             "spde_linearity": _spde_linearity(), "w1_axioms": _w1(), "entropy_diversity": _entropy_diversity()}
    ok = all(parts.values())
    _report(capsys, 8, "structural invariants", ok, " ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in parts.items()),
            t0)
    assert ok


def test_9_self_calibration(capsys):
    t0 = time.perf_counter()
    truth = ModelParams(2.0, 1.0, 1.0, 1000, 2.0, 250)
    init = np.random.default_rng(90).lognormal(0.0, 0.3, 1000)
    panel = synthetic_panel(truth, 91, init, substeps=8)
    res = calibrate(panel, [1.0, 2.0, 3.0], [0.5, 1.0, 2.0], truth, seed=92, replications=8)
    ok = res.best == (2.0, 1.0)
    table = sorted(res.table, key=lambda r: r["score"])
    runner = table[1]
    _report(capsys, 9, "self-calibration recovers (2, 1)", ok,
            f"best={res.best} score={table[0]['score']:.2e} "
            f"runner-up=({runner['alpha']:g}, {runner['beta']:g}) {runner['score']:.2e}", t0)
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
