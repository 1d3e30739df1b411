import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psketch.embeddings import EmbeddingSpec
from psketch.errors import ConditioningError
from psketch.regress import (
    RegressionProblem,
    default_sample_size,
    irls_solve,
    precondition_sample_solve,
    regression_instance,
    sampling_probabilities,
    sketch_solve,
    smoothed_cost,
)


@pytest.mark.parametrize("p", [1.0, 1.3, 1.7, 2.0])
def test_consistent_system(rng, p):
    A = rng.standard_normal((60, 4))
    res = irls_solve(RegressionProblem(A, A @ rng.standard_normal(4), p))
    assert res.cost < 1e-8


def test_p2_matches_normal_equations(rng):
    A = rng.standard_normal((200, 5))
    b = rng.standard_normal(200)
    x = np.linalg.solve(A.T @ A, A.T @ b)
    res = irls_solve(RegressionProblem(A, b, 2.0))
    np.testing.assert_allclose(res.x_hat, x, rtol=1e-8)
    assert res.iterations == 0 and res.converged


def test_weighted_median():
    prob = RegressionProblem(np.ones((5, 1)), [0, 0, 0, 0, 10], 1.0)
    res = irls_solve(prob)
    grid = np.linspace(-1, 11, 12001)
    brute = grid[np.argmin([np.abs(g - prob.b).sum() for g in grid])]
    assert abs(res.x_hat[0] - brute) < 1e-6
    assert res.cost == pytest.approx(10.0, rel=1e-6)


def test_smoothed_cost_closed_forms():
    r = np.array([-3.0, 0.5, 2.0])
    assert smoothed_cost(r, 2.0) == pytest.approx(np.sum(r**2) / 2)
    assert smoothed_cost(r, 1.0) == pytest.approx(np.abs(r).sum(), rel=1e-6)
    from scipy.integrate import quad
    g = 1e-3
    expect = sum(quad(lambda s: s * (s + g) ** (1.5 - 2), 0, abs(a))[0] for a in r)
    assert smoothed_cost(r, 1.5, g) == pytest.approx(expect, rel=1e-9)


@settings(max_examples=25)
@given(st.floats(1.0, 2.0), st.integers(0, 2**32 - 1))
def test_history_monotone(p, seed):
    prob = regression_instance(120, 3, p, seed)
    res = irls_solve(prob)
    h = np.array(res.history)
    assert np.all(np.diff(h) <= 0)


def test_cost_recomputable_and_flagged(rng):
    prob = regression_instance(500, 4, 1.0, 3)
    res = irls_solve(prob)
    assert res.converged
    assert abs(res.cost - prob.cost(res.x_hat)) <= 1e-10 * res.cost
    short = irls_solve(prob, max_iter=1)
    assert not short.converged and short.iterations == 1


def test_problem_validation(rng):
    A = rng.standard_normal((10, 3))
    with pytest.raises(ValueError):
        RegressionProblem(A, np.zeros(9), 1.0)
    with pytest.raises(ValueError):
        RegressionProblem(A, np.zeros(10), 2.5)
    A[:, 2] = A[:, 0]
    with pytest.raises(ConditioningError):
        RegressionProblem(A, np.zeros(10), 1.0)
    with pytest.raises(ValueError):
        irls_solve(regression_instance(20, 2, 1.0), tol=0)


def test_weights_scale_rows(rng):
    prob = regression_instance(80, 3, 1.2, 5)
    w = rng.uniform(0.5, 2.0, 80)
    a = irls_solve(prob, weights=w)
    b = irls_solve(RegressionProblem(prob.A * w[:, None], prob.b * w, 1.2))
    np.testing.assert_allclose(a.x_hat, b.x_hat, rtol=1e-12)


def test_sketch_identity_equals_irls():
    prob = regression_instance(300, 4, 1.0, 8)
    res = sketch_solve(prob, EmbeddingSpec("identity", n=300, d=4))
    direct = irls_solve(prob)
    np.testing.assert_array_equal(res.x_hat, direct.x_hat)
    assert res.method == "sketch:identity"


def test_sketch_p2_countsketch():
    n, d = 10_000, 8
    good = 0
    for trial in range(100):
        prob = regression_instance(n, d, 2.0, trial, noise="gaussian")
        opt = irls_solve(prob).cost
        spec = EmbeddingSpec("countsketch", n=n, d=d, row_const=10.0, seed=trial)
        res = sketch_solve(prob, spec)
        assert res.cost >= opt * (1 - 1e-12)
        good += res.cost <= 1.5 * opt
    assert good >= 90


def test_sketch_rank_deficient():
    prob = regression_instance(200, 6, 1.0, 1)
    with pytest.raises(ConditioningError):
        sketch_solve(prob, EmbeddingSpec("countsketch", n=200, d=6, row_const=0.1))


def test_sampling_probabilities(rng):
    U = rng.standard_normal((50, 3))
    q = sampling_probabilities(U, 1.0, 10)
    assert np.all((0 < q) & (q <= 1))
    assert q.sum() == pytest.approx(10, rel=0.3)
    assert np.all(sampling_probabilities(U, 1.0, 1e9) == 1.0)


def test_precondition_full_sample_equals_irls():
    prob = regression_instance(400, 4, 1.0, 2)
    spec = EmbeddingSpec("composed_cs", n=400, d=4, seed=6)
    res = precondition_sample_solve(prob, spec, t=1e12)
    direct = irls_solve(prob)
    assert res.extra["sampled_rows"] == 400
    assert res.cost == pytest.approx(direct.cost, rel=1e-7)
    np.testing.assert_allclose(res.x_hat, direct.x_hat, atol=1e-6)


def test_precondition_contract():
    prob = regression_instance(400, 4, 1.0, 2)
    spec = EmbeddingSpec("composed_cs", n=400, d=4, seed=6)
    with pytest.raises(ValueError, match="at least d"):
        precondition_sample_solve(prob, spec, t=3)
    a = precondition_sample_solve(prob, spec, t=100)
    b = precondition_sample_solve(prob, spec, t=100)
    np.testing.assert_array_equal(a.x_hat, b.x_hat)
    assert a.to_dict() == b.to_dict()
    c = precondition_sample_solve(prob, spec, t=100, seed=7)
    assert c.seed == 7
    assert abs(a.cost - prob.cost(a.x_hat)) <= 1e-10 * a.cost


def test_default_sample_size():
    assert default_sample_size(8) == pytest.approx(40 * 8 * math.log(8))
    assert default_sample_size(1) == 1.0
