import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptspec.variance import (
    VarianceEstimator,
    known_variance,
    local_variance,
    parse_variance,
    quadratic_variance,
    rice_variance,
    sigma_floor,
    vhat_baseline,
    vhat_diff,
    vhat_single,
)
from adaptspec.weights import weights_piecewise

W2 = np.array([[0.0, 0.5], [0.5, 0.0]])


def random_weights(n, rng):
    A = rng.standard_normal((n, n))
    W = (A + A.T) / 2
    np.fill_diagonal(W, 0.0)
    return W


def test_local_full_cover():
    est = local_variance(np.array([[0.1], [0.9]]), np.array([0.0, 2.0]), 5.0)
    np.testing.assert_allclose(est.per_point, [1.0, 1.0])
    assert est.floor_applied == 0


def test_local_constant_is_floored():
    Y = np.full(6, 3.0)
    est = local_variance(np.linspace(0, 1, 6)[:, None], Y, 0.5)
    assert np.all(est.per_point == sigma_floor(Y)) and est.floor_applied == 6


def test_local_singleton_neighbourhoods():
    Y = np.array([1.0, -1.0, 1.0])
    est = local_variance(np.array([[0.0], [0.5], [1.0]]), Y, 0.3)
    np.testing.assert_array_equal(est.per_point, np.full(3, sigma_floor(Y)))


def test_local_uses_sup_norm():
    X = np.array([[0.0, 0.0], [0.2, 0.2], [0.9, 0.9]])
    Y = np.array([0.0, 2.0, 5.0])
    # sup-norm distance 0.2 <= 0.25 while the Euclidean distance is 0.28
    est = local_variance(X, Y, 0.25)
    np.testing.assert_allclose(est.per_point[:2], [1.0, 1.0])


def test_rice_examples():
    assert rice_variance(np.array([0.0, 0.5, 1.0]), np.array([1.0, -1.0, 1.0])).per_point[0] == 2.0
    Y = np.full(5, -2.0)
    assert np.all(rice_variance(np.arange(5.0), Y).per_point == sigma_floor(Y))


def test_rice_orders_by_design():
    X = np.array([1.0, 0.0, 0.5])
    Y = np.array([1.0, 1.0, -1.0])
    assert rice_variance(X, Y).per_point[0] == 2.0


def test_rice_rejects_multivariate():
    with pytest.raises(ValueError):
        rice_variance(np.zeros((5, 2)), np.zeros(5))


def test_rice_consistency():
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x = rng.uniform(0, 1, 1000)
        y = np.sin(2 * np.pi * x) + rng.standard_normal(1000)
        hits += abs(rice_variance(x, y).per_point[0] - 1.0) <= 0.1
    assert hits >= 95


def test_known_variance():
    assert np.all(known_variance(2.0, 4).per_point == 2.0)
    with pytest.raises(ValueError):
        known_variance(0.0, 3)


@pytest.mark.parametrize("spec, parsed", [("rice", ("rice", None)), ("local:0.125", ("local", 0.125)), ("known:2", ("known", 2.0))])
def test_parse_variance(spec, parsed):
    assert parse_variance(spec) == parsed


@pytest.mark.parametrize("spec", ["rice:1", "local", "local:-1", "known:x", "mad"])
def test_parse_variance_rejects(spec):
    with pytest.raises(ValueError):
        parse_variance(spec)


@pytest.mark.parametrize("spec", ["rice", "local:0.2", "known:1.5"])
def test_batch_estimator_matches_single(spec):
    rng = np.random.default_rng(3)
    X = rng.uniform(0, 1, (30, 1))
    Y = rng.standard_normal((4, 30))
    Y[2] = 1.0
    est = VarianceEstimator(X, spec)
    batch = est(Y)
    for b in range(4):
        np.testing.assert_allclose(batch[b], est.estimate(Y[b]).per_point, rtol=1e-12)
    if spec == "rice":
        np.testing.assert_allclose(batch[0], rice_variance(X, Y[0]).per_point, rtol=1e-12)
    if spec.startswith("local"):
        np.testing.assert_allclose(batch[0], local_variance(X, Y[0], 0.2).per_point, rtol=1e-12)


def test_standardisation_examples():
    s = np.ones(2)
    assert vhat_single(np.zeros((2, 2)), s) == 0.0 and vhat_baseline(np.zeros((2, 2)), s) == 0.0
    assert vhat_diff(np.zeros((2, 2)), np.zeros((2, 2)), s) == 0.0
    assert math.isclose(vhat_single(W2, s), 1.0)
    W = weights_piecewise(np.random.default_rng(0).uniform(size=(20, 1)), 0.25)
    assert vhat_diff(W, W, np.full(20, 3.0)) == 0.0


def test_quadratic_variance_double_sum():
    rng = np.random.default_rng(9)
    W = random_weights(8, rng)
    s = rng.uniform(0.5, 2.0, 8)
    total = sum(W[i, j] ** 2 * s[i] * s[j] for i in range(8) for j in range(8))
    assert math.isclose(quadratic_variance(W, s), math.sqrt(2 * total), rel_tol=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 15), c=st.floats(1e-3, 1e3))
def test_triangle_bound_and_scale_equivariance(seed, n, c):
    rng = np.random.default_rng(seed)
    Wh, W0 = random_weights(n, rng), random_weights(n, rng)
    s = rng.uniform(0.1, 3.0, n)
    assert vhat_diff(Wh, W0, s) <= vhat_single(Wh, s) + vhat_single(W0, s) + 1e-12
    for f in (vhat_single, vhat_baseline):
        assert math.isclose(f(Wh, c * s), c * f(Wh, s), rel_tol=1e-10)
    assert math.isclose(vhat_diff(Wh, W0, c * s), c * vhat_diff(Wh, W0, s), rel_tol=1e-10)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_quadratic_form_moments(seed):
    """Mean 0 and variance ``2 sum w_ij^2 s_i s_j`` for independent errors."""
    rng = np.random.default_rng(seed)
    n, draws = 30, 20000
    W = random_weights(n, rng)
    s = rng.uniform(0.5, 2.0, n)
    eps = rng.standard_normal((draws, n)) * np.sqrt(s)
    q = np.einsum("bi,ij,bj->b", eps, W, eps)
    assert abs(q.mean()) <= 3 * q.std(ddof=1) / math.sqrt(draws)
    assert abs(q.var(ddof=1) / quadratic_variance(W, s) ** 2 - 1.0) <= 0.05
