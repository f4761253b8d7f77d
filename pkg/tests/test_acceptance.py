"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criteria 1 to 6 share two desk-scale experiments (the white-noise design
with Gaussian errors, and the heteroscedastic null), run once per session.
"""

import math
import warnings

import numpy as np
import pytest

from adaptspec import engine
from adaptspec.bootstrap import BootstrapConfig, draw_multipliers
from adaptspec.models import get_model
from adaptspec.simulation import preset, run_experiment
from adaptspec.variance import quadratic_variance
from adaptspec.weights import (
    additive_projector,
    build_grid,
    frobenius_sq,
    piecewise_projector,
    polynomial_projector,
    weights_kernel,
    weights_piecewise,
)

SEED = 11


@pytest.fixture(scope="module")
def gaussian_table():
    scenarios, variants, settings = preset("table1")
    return run_experiment(scenarios, variants, settings, seed=SEED)


@pytest.fixture(scope="module")
def heteroscedastic_null():
    scenarios, variants, settings = preset("table4")
    return run_experiment(scenarios[:1], variants, settings, seed=SEED)


def pct(x):
    return f"{100 * x:.1f}%"


def test_criterion_01_null_level(gaussian_table, report):
    cell5 = gaussian_table.get("H0", "ours", 1.0, 0.05)
    cell2 = gaussian_table.get("H0", "ours", 1.0, 0.02)
    assert cell5.replications == 1000
    ok = 0.031 <= cell5.frequency <= 0.057 and 0.010 <= cell2.frequency <= 0.026
    assert report(1, ok, f"white-noise null, c=1: 5% level {pct(cell5.frequency)} in [3.1, 5.7], 2% level {pct(cell2.frequency)} in [1.0, 2.6]")


def test_criterion_02_low_frequency_power(gaussian_table, report):
    cell = gaussian_table.get("t=2", "ours", 1.0, 0.05)
    assert cell.replications == 500
    assert report(2, cell.frequency >= 0.91, f"t=2, c=1: 5% level power {pct(cell.frequency)} >= 91%")


def test_criterion_03_high_frequency_dominance(gaussian_table, report):
    ours = gaussian_table.get("t=10", "ours", 1.0, 0.05).frequency
    mx = gaussian_table.get("t=10", "max", None, 0.05).frequency
    gap = 100 * (ours - mx)
    assert report(3, gap >= 8.0, f"t=10: ours {pct(ours)} minus max {pct(mx)} = {gap:.1f} points >= 8")


def test_criterion_04_fixed_baseline_weakness(gaussian_table, report):
    cell = gaussian_table.get("t=5", "fixed_h0", None, 0.05)
    assert report(4, cell.frequency <= 0.13, f"t=5: fixed coarsest bandwidth power {pct(cell.frequency)} <= 13%")


def test_criterion_05_heteroscedastic_null(heteroscedastic_null, report):
    cell = heteroscedastic_null.get("H0", "ours", 1.0, 0.05)
    assert cell.replications == 1000
    ok = 0.029 <= cell.frequency <= 0.055
    assert report(5, ok, f"heteroscedastic null, local variance, c=1: 5% level {pct(cell.frequency)} in [2.9, 5.5]")


def test_criterion_06_selection_invariants(gaussian_table, heteroscedastic_null, report):
    counts = {}
    for table in (gaussian_table, heteroscedastic_null):
        for key, value in table.violations.items():
            counts[key] = counts.get(key, 0) + value
    failures = sum(gaussian_table.failures.values()) + sum(heteroscedastic_null.failures.values())
    checked = {k: v for k, v in counts.items() if k.endswith(("power_bound", "characterization"))}
    assert len(checked) == 4  # outer and bootstrap, both properties
    total = sum(counts.values())
    ok = total == 0 and failures == 0
    assert report(6, ok, f"selection invariants over criteria 1-5: {total} violations, {failures} failed replicates")


def test_criterion_07_quadratic_form_moments(report):
    """Mean 0 and variance ``2 sum w_ij^2 s_i s_j`` of ``e'We`` for independent errors."""
    n, draws, chunk = 60, 100_000, 10_000
    rng = np.random.default_rng(7)
    worst_mean, worst_var = 0.0, 0.0
    for k in range(20):
        X = rng.uniform(size=(n, 1))
        kind = k % 4
        if kind == 0:
            A = rng.standard_normal((n, n))
            W = (A + A.T) / 2
            np.fill_diagonal(W, 0.0)
        elif kind == 1:
            W = weights_piecewise(X, 1 / 8).entries
        elif kind == 2:
            W = weights_kernel(X, 0.1).entries
        else:
            W = weights_piecewise(X, 1 / 4, 1).entries
        sigma2 = rng.uniform(0.25, 4.0, n)
        q = np.empty(draws)
        for start in range(0, draws, chunk):
            z = rng.standard_normal((chunk, n)) if k % 2 == 0 else rng.standard_exponential((chunk, n)) - 1.0
            e = z * np.sqrt(sigma2)
            q[start : start + chunk] = np.einsum("bi,ij,bj->b", e, W, e)
        target = quadratic_variance(W, sigma2) ** 2
        worst_mean = max(worst_mean, abs(q.mean()) / (q.std(ddof=1) / math.sqrt(draws)))
        worst_var = max(worst_var, abs(q.var(ddof=1) / target - 1.0))
    ok = worst_mean <= 3.0 and worst_var <= 0.05
    assert report(7, ok, f"20 configurations, n=60: worst |mean|/SE {worst_mean:.2f} <= 3, worst relative variance error {100 * worst_var:.2f}% <= 5%")


def test_criterion_08_quadratic_form_oracle(report):
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 51))
        A = rng.standard_normal((n, n))
        W = A + A.T
        np.fill_diagonal(W, 0.0)
        U = rng.standard_normal(n) * 10 ** rng.uniform(-3, 3)
        Wl, Ul = W.tolist(), U.tolist()
        ref = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    ref += Wl[i][j] * Ul[i] * Ul[j]
        worst = max(worst, abs(engine.statistic_Th(W, U) - ref) / abs(ref))
    assert report(8, worst <= 1e-10, f"100 instances, n <= 50: worst relative error {worst:.1e} <= 1e-10")


def test_criterion_09_multiplier_moments(report):
    w = draw_multipliers(10**6, BootstrapConfig(seed=9), 0)
    moments = [float(np.mean(w**k)) for k in (1, 2, 3)]
    err = max(abs(m - t) for m, t in zip(moments, (0.0, 1.0, 1.0)))
    assert report(9, err <= 0.01, f"two-point law, 10^6 draws: moments {moments[0]:.4f}, {moments[1]:.4f}, {moments[2]:.4f}, max error {err:.4f} <= 0.01")


def test_criterion_10_null_limit_shape(report):
    n, reps = 2000, 2000
    cfg = engine.TestConfig(grid=build_grid(0.25, 2, 2, piecewise=True), variance="known:1")
    model = get_model("zero")
    values = np.empty(reps)
    for r in range(reps):
        rng = np.random.default_rng(np.random.SeedSequence(10, spawn_key=(r,)))
        X = rng.uniform(size=(n, 1))
        Y = rng.standard_normal(n)
        out = engine.run_fixed_h_test(X, Y, model, cfg)
        assert out.threshold == pytest.approx(1.6448536, abs=1e-6)
        values[r] = out.statistic
    mean, var = values.mean(), values.var(ddof=1)
    ok = abs(mean) <= 0.1 and abs(var - 1.0) <= 0.15
    assert report(10, ok, f"n=2000, known variance, baseline statistic over {reps} replications: mean {mean:.3f}, variance {var:.3f}")


def test_criterion_11_projector_identities(report):
    rng = np.random.default_rng(11)
    worst = 0.0
    cases = {
        "polynomial": (lambda X, h: polynomial_projector(X, h), 1, (1.0, 0.5, 1 / 3, 0.25)),
        "piecewise": (lambda X, h: piecewise_projector(X, h, 1), 1, (0.25, 0.125, 0.0625)),
        "additive": (lambda X, h: additive_projector(X, h), 2, (1.0, 0.5, 1 / 3)),
    }
    for name, (build, p, hs) in cases.items():
        for _ in range(20):
            X = rng.uniform(size=(120, p))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                built = [build(X, h) for h in hs]
            P0, r0 = built[0]
            for P, r in built[1:]:
                worst = max(worst, abs(frobenius_sq(P - P0) - (r - r0)))
    assert report(11, worst <= 1e-8, f"60 designs over polynomial, piecewise and additive families: worst deviation {worst:.1e} <= 1e-8")


def test_desk_scale_table_matches_published_power(gaussian_table):
    """Supplementary: t=10, c=1 power within 4.5 points of the published 65.6%."""
    assert abs(100 * gaussian_table.frequency("t=10", "ours", 1.0) - 65.6) <= 4.5
