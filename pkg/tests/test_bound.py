import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from layercollapse.bound import (bound_constant, estimate_x_delta, pathwise_terms, sigma_max,
                                 squared_errors, verify_bound)
from layercollapse.errors import InsufficientDataError, UnsupportedConfigurationError
from layercollapse.nn import CollapsibleBlock, LinearLayer, PReLULayer
from layercollapse.tensor import Tensor

from _support import random_block


def test_sigma_max_examples():
    assert sigma_max(np.diag([3.0, 4.0])) == pytest.approx(4.0, rel=1e-7)
    assert sigma_max(np.eye(5)) == pytest.approx(1.0, rel=1e-7)
    assert sigma_max(np.zeros((3, 2))) == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 10**6))
def test_sigma_max_matches_svd(r, c, seed):
    M = np.random.default_rng(seed).standard_normal((r, c))
    ref = np.sqrt(np.linalg.eigvalsh(M.T @ M).max())
    assert sigma_max(M) == pytest.approx(ref, rel=1e-6)


def test_x_delta_examples():
    X = np.tile([[3.0, 4.0]], (50, 1))
    for d in (0.5, 0.1, 0.01):
        assert estimate_x_delta(X, d) == 5.0
    norms = np.arange(1, 101, dtype=float)[:, None]
    assert estimate_x_delta(norms, 0.1) == 90.0
    assert estimate_x_delta(norms, 1e-9) == 100.0


def test_bound_constant_examples():
    assert bound_constant(np.eye(3), np.zeros(3), np.eye(3), 2.0) == pytest.approx(4.0)
    W1, b1, W2 = np.array([[1.0], [1.0]]), np.array([1.0, 2.0]), np.array([[1.0, 1.0]])
    # W2 W1 = [[2]], W2 b1 = [3]
    assert bound_constant(W1, b1, W2, 1.5) == pytest.approx(4 * 2.25 + 9)
    rng = np.random.default_rng(0)
    A, B = rng.standard_normal((5, 3)), rng.standard_normal((2, 5))
    c1 = bound_constant(A, np.zeros(5), B, 1.3)
    assert bound_constant(2 * A, np.zeros(5), B, 1.3) == pytest.approx(4 * c1)


def _one_d_block(alpha):
    return CollapsibleBlock(LinearLayer([[1.0]], [0.0]), PReLULayer(alpha),
                            LinearLayer([[1.0]], [0.0]))


def test_one_d_uniform_fixture():
    X = np.random.default_rng(0).uniform(-1, 1, (10_000, 1))
    rep = verify_bound(_one_d_block(0.5), X, 0.1)
    assert rep.x_delta_norm == pytest.approx(0.9, abs=0.02)
    assert rep.C == pytest.approx(0.81, abs=0.04)
    assert rep.C * 0.25 == pytest.approx(0.2025, abs=0.01)
    assert rep.violation_rate <= 0.1 + 3 * np.sqrt(0.1 * 0.9 / rep.n_evaluation)


def test_alpha_one_never_violates():
    rng = np.random.default_rng(1)
    blk = random_block(rng, 4, 6, 3, alpha=1.0)
    for d in (0.1, 0.01):
        assert verify_bound(blk, rng.standard_normal((500, 4)), d).violation_rate == 0.0


def test_violation_rate_grows_with_delta():
    # a larger delta means a smaller norm threshold, hence a tighter bound
    rng = np.random.default_rng(2)
    blk = _one_d_block(0.3)
    X = rng.uniform(-1, 1, (4000, 1))
    rates = [verify_bound(blk, X, d).violation_rate for d in (0.01, 0.05, 0.1, 0.3)]
    assert rates == sorted(rates)


def test_verify_bound_preconditions():
    rng = np.random.default_rng(3)
    with pytest.raises(InsufficientDataError):
        verify_bound(_one_d_block(0.5), rng.standard_normal((50, 1)), 0.1)
    with pytest.raises(UnsupportedConfigurationError):
        verify_bound(random_block(rng, 2, 3, 2, bn=True), rng.standard_normal((200, 2)), 0.1)


def test_pathwise_square_of_sum_holds_for_width_one():
    rng = np.random.default_rng(4)
    for _ in range(200):
        n_in, n_out = rng.integers(1, 9, size=2)
        W1, b1 = rng.standard_normal((1, n_in)), rng.standard_normal(1)
        W2, b2 = rng.standard_normal((n_out, 1)), rng.standard_normal(n_out)
        t = pathwise_terms(W1, b1, W2, b2, rng.uniform(-1, 2), rng.standard_normal((20, n_in)))
        assert np.all(t["error"] <= t["square_of_sum"] * (1 + 1e-9) + 1e-12)


def test_pathwise_sum_of_squares_fails_even_in_one_dimension():
    # z = x + b1 = -2 gives error 4, while smax^2 |x|^2 + |W2 b1|^2 = 2 drops the cross term
    t = pathwise_terms(np.array([[1.0]]), np.array([-1.0]), np.array([[1.0]]), np.zeros(1),
                       0.0, np.array([[-1.0]]))
    assert t["error"][0] == pytest.approx(4.0)
    assert t["sum_of_squares"][0] == pytest.approx(2.0)
    assert t["error"][0] > t["sum_of_squares"][0]


def test_composed_operator_norm_cannot_bound_cancelling_paths():
    # W2 W1 = 0, so any bound built from smax(W2 W1) and W2 b1 is zero here
    W1, b1 = np.array([[1.0], [-1.0]]), np.zeros(2)
    W2, b2 = np.array([[1.0, 1.0]]), np.zeros(1)
    t = pathwise_terms(W1, b1, W2, b2, 0.0, np.array([[1.0]]))
    assert t["square_of_sum"][0] == 0.0
    assert t["error"][0] == pytest.approx(1.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(1, 16), st.integers(1, 8), st.floats(-1, 2),
       st.integers(0, 10**6))
def test_pathwise_operator_form_always_holds(n_in, h, n_out, alpha, seed):
    rng = np.random.default_rng(seed)
    t = pathwise_terms(rng.standard_normal((h, n_in)), rng.standard_normal(h),
                       rng.standard_normal((n_out, h)), rng.standard_normal(n_out), alpha,
                       rng.standard_normal((30, n_in)))
    assert np.all(t["error"] <= t["operator"] * (1 + 1e-9) + 1e-12)


def test_squared_errors_match_forward_difference():
    rng = np.random.default_rng(5)
    blk = random_block(rng, 3, 5, 2, alpha=0.4)
    X = rng.standard_normal((10, 3))
    lin = blk.fc2.W.data @ (blk.fc1.W.data @ X.T + blk.fc1.b.data[:, None]) + blk.fc2.b.data[:, None]
    ref = np.sum((lin.T - blk.forward(Tensor(X)).data) ** 2, axis=1)
    np.testing.assert_allclose(squared_errors(blk, X), ref, atol=1e-12)
