import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from layercollapse import tensor as T
from layercollapse.errors import ContractError, DimensionError, NumericError
from layercollapse.tensor import Tensor

from _support import central_diff, rel_err


def test_matmul_identity_and_hand_product():
    b = Tensor([[1, 2], [3, 4]])
    np.testing.assert_array_equal(T.matmul(Tensor(np.eye(2)), b).data, [[1, 2], [3, 4]])
    np.testing.assert_array_equal((Tensor([[1, 1], [1, -1]]) @ b).data, [[4, 6], [-2, -2]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_grad_of_sum_of_product_matches_fd():
    rng = np.random.default_rng(0)
    a_val, b_val = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    a = Tensor(a_val.copy(), requires_grad=True)
    (a * Tensor(b_val)).sum().backward()
    fd = central_diff(lambda: float(np.sum(a_val * b_val)), a_val)
    assert rel_err(a.grad, fd) <= 1e-6


def test_prelu_examples():
    assert T.prelu(Tensor(-2.0), Tensor(0.25)).item() == -0.5
    x = Tensor([-3.0, -0.5, 0.0, 2.0])
    np.testing.assert_array_equal(T.prelu(x, Tensor(1.0)).data, x.data)
    for a in (0.0, 0.3, 1.7):
        assert T.prelu(Tensor(3.0), Tensor(a)).item() == 3.0


def test_prelu_gradients():
    x = Tensor([-2.0, 0.0, 3.0], requires_grad=True)
    a = Tensor(0.25, requires_grad=True)
    T.prelu(x, a).sum().backward()
    np.testing.assert_array_equal(x.grad, [0.25, 1.0, 1.0])  # subgradient 1 at zero
    assert a.grad == pytest.approx(-2.0)


def test_prelu_rejects_non_finite():
    with pytest.raises(NumericError):
        T.prelu(Tensor([np.nan]), Tensor(0.5))


def test_backward_examples():
    w = Tensor(np.zeros(3), requires_grad=True)
    w.sum().backward()
    np.testing.assert_array_equal(w.grad, [1, 1, 1])

    w = Tensor([1.0, 2.0], requires_grad=True)
    loss = (w * w).sum()
    loss.backward()
    np.testing.assert_array_equal(w.grad, [2, 4])
    loss.backward()
    np.testing.assert_array_equal(w.grad, [4, 8])


def test_backward_needs_scalar():
    w = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ContractError):
        (w * 2).backward()


def test_diamond_graph_visits_shared_node_once():
    x = Tensor(3.0, requires_grad=True)
    y = x * x
    (y + y).backward()
    assert x.grad == pytest.approx(12.0)


def test_no_grad_records_nothing():
    w = Tensor([1.0], requires_grad=True)
    with T.no_grad():
        out = w * 2
    assert not out.requires_grad


def test_broadcast_bias_grad():
    x = Tensor(np.ones((4, 3)))
    b = Tensor(np.zeros(3), requires_grad=True)
    (x + b).sum().backward()
    np.testing.assert_array_equal(b.grad, [4, 4, 4])


@pytest.mark.parametrize("op", ["exp", "log", "softmax", "log_softmax", "mean", "div", "sqrt"])
def test_op_gradients_match_fd(op):
    rng = np.random.default_rng(1)
    val = rng.uniform(0.5, 2.0, (3, 4))
    weights = rng.standard_normal((3, 4))

    def f_tensor(t):
        if op == "exp":
            return T.exp(t)
        if op == "log":
            return T.log(t)
        if op == "softmax":
            return T.softmax(t)
        if op == "log_softmax":
            return T.log_softmax(t)
        if op == "mean":
            return T.mean(t, axis=0, keepdims=True) * t
        if op == "div":
            return T.div(Tensor(weights), t)
        return T.sqrt(t)

    x = Tensor(val.copy(), requires_grad=True)
    (f_tensor(x) * Tensor(weights)).sum().backward()

    def f():
        with T.no_grad():
            return float(np.sum(f_tensor(Tensor(val)).data * weights))

    assert rel_err(x.grad, central_diff(f, val)) <= 1e-6


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(2, 7), st.integers(0, 10_000))
def test_softmax_rows_sum_to_one(rows, cols, seed):
    x = np.random.default_rng(seed).standard_normal((rows, cols)) * 30
    p = T.softmax(Tensor(x)).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_conv2d_matches_loop_and_fd():
    from _support import full_conv2d_reference
    rng = np.random.default_rng(2)
    xv, Kv, bv = rng.standard_normal((1, 2, 5, 5)), rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3)
    out = T.conv2d(Tensor(xv), Tensor(Kv), Tensor(bv))
    np.testing.assert_allclose(out.data[0], full_conv2d_reference(xv[0], Kv, bv), atol=1e-12)

    g = rng.standard_normal(out.shape)
    K = Tensor(Kv.copy(), requires_grad=True)
    x = Tensor(xv.copy(), requires_grad=True)
    (T.conv2d(x, K, Tensor(bv), padding=1) * Tensor(np.pad(g, ((0, 0), (0, 0), (1, 1), (1, 1))))).sum().backward()

    def f():
        with T.no_grad():
            o = T.conv2d(Tensor(xv), Tensor(Kv), Tensor(bv), padding=1).data
        return float(np.sum(o * np.pad(g, ((0, 0), (0, 0), (1, 1), (1, 1)))))

    assert rel_err(K.grad, central_diff(f, Kv)) <= 1e-6
    assert rel_err(x.grad, central_diff(f, xv)) <= 1e-6


def test_item_requires_single_element():
    assert Tensor([[2.5]]).item() == 2.5
    with pytest.raises(ContractError):
        Tensor([1.0, 2.0]).item()
