import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from layercollapse import tensor as T
from layercollapse.collapse import (CollapseConfig, ConvGainQuery, GainQuery, Uncollapsible,
                                    collapse_block, collapse_model, conv_gain, count_macs,
                                    count_params, dense_gain, fold_block, fuse_conv,
                                    fuse_conv_layers)
from layercollapse.errors import NumericError, UnsupportedConfigurationError
from layercollapse.nn import (BatchNormLayer, CollapsibleBlock, Conv2dLayer, LinearLayer,
                              ModelGraph, PReLULayer, ReLULayer, init_model)
from layercollapse.tensor import Tensor

from _support import full_conv2d_reference, random_block


def test_fold_hand_example():
    blk = CollapsibleBlock(LinearLayer([[1, 2], [3, 4]], [1, 1]), PReLULayer(1.0),
                           LinearLayer([[1, 1], [1, -1]], [0, 0]))
    W, b = fold_block(blk)
    np.testing.assert_array_equal(W, [[4, 6], [-2, -2]])
    np.testing.assert_array_equal(b, [2, 0])


def test_fold_bn_hand_example():
    bn = BatchNormLayer(1, eps=0.0, gamma=[2.0], beta=[1.0], running_mean=[0.5], running_var=[1.0])
    blk = CollapsibleBlock(LinearLayer([[1.0]], [0.0]), PReLULayer(1.0),
                           LinearLayer([[3.0]], [0.0]), bn=bn)
    fused = collapse_block(blk)
    np.testing.assert_array_equal(fused.W.data, [[6.0]])
    np.testing.assert_array_equal(fused.b.data, [0.0])


def test_threshold_contract():
    blk = random_block(np.random.default_rng(0), 2, 3, 2, alpha=0.5)
    res = collapse_block(blk, CollapseConfig(0.05))
    assert isinstance(res, Uncollapsible) and "exceeds" in res.reason
    blk.act.alpha.data[...] = 0.96
    assert isinstance(collapse_block(blk, CollapseConfig(0.05)), LinearLayer)
    blk.act.alpha.data[...] = 1.0
    assert isinstance(collapse_block(blk, CollapseConfig(0.0)), LinearLayer)


def test_non_finite_weights_rejected():
    blk = random_block(np.random.default_rng(0), 2, 3, 2)
    blk.fc1.W.data[0, 0] = np.inf
    with pytest.raises(NumericError):
        collapse_block(blk)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 8), st.integers(1, 16), st.integers(1, 8), st.booleans(), st.integers(0, 10**6))
def test_fused_block_equals_block_at_alpha_one(n_in, h, n_out, bn, seed):
    rng = np.random.default_rng(seed)
    blk = random_block(rng, n_in, h, n_out, bn=bn)
    fused = collapse_block(blk)
    x = rng.standard_normal((50, n_in))
    with T.no_grad():
        diff = np.abs(fused.forward(Tensor(x)).data - blk.forward(Tensor(x)).data).max()
    assert diff <= 1e-9


def test_collapse_model_examples():
    arch = {"input_dim": 4, "layers": [{"type": "block", "hidden": 6, "out": 5},
                                       {"type": "block", "hidden": 6, "out": 3, "batchnorm": True}]}
    m = init_model(arch, seed=0)
    for _, blk in m.blocks():
        blk.act.alpha.data[...] = 1.0
    out, reports = collapse_model(m, CollapseConfig())
    assert all(r.collapsed for r in reports) and not out.blocks()
    x = np.random.default_rng(1).standard_normal((1000, 4))
    assert np.abs(out.predict(x) - m.predict(x)).max() <= 1e-9
    assert m.blocks(), "input model untouched"

    plain = ModelGraph([("lin", LinearLayer(np.eye(2), np.zeros(2))), ("r", ReLULayer())])
    same, reports = collapse_model(plain)
    assert reports == [] and same.names() == plain.names()

    mixed = init_model(arch, seed=0)
    mixed["block0"].act.alpha.data[...] = 1.0
    mixed["block1"].act.alpha.data[...] = 0.0
    _, reports = collapse_model(mixed)
    assert [r.collapsed for r in reports] == [True, False]


def test_collapse_report_counts():
    m = ModelGraph([("b", random_block(np.random.default_rng(2), 8, 32, 4))], input_shape=(8,))
    _, (rep,) = collapse_model(m)
    assert rep.params_before == 8 * 32 + 32 + 1 + 32 * 4 + 4
    assert rep.params_after == 8 * 4 + 4
    assert rep.macs_before == 8 * 32 + 32 * 4 and rep.macs_after == 32
    assert rep.gain_fraction == pytest.approx(dense_gain(GainQuery(8, 32, 4)))


def test_dense_gain_examples():
    assert dense_gain(GainQuery(2, 1, 2)) == 0.0
    assert abs(dense_gain(GainQuery(192, 768, 192)) - 0.875) <= 1e-12
    assert abs(dense_gain(GainQuery(4, 1, 4)) + 1.0) <= 1e-12


def test_conv_gain_examples():
    assert abs(conv_gain(ConvGainQuery(1, 1, 5, 5, 5)) + 1.0) <= 1e-12
    assert abs(conv_gain(ConvGainQuery(3, 3, 64, 64, 64)) - 0.28) <= 1e-12
    assert abs(conv_gain(ConvGainQuery(3, 3, 64, 512, 64)) - (1 - 18 * 512 * 64 / (25 * 64 * 64))) <= 1e-12
    assert conv_gain(ConvGainQuery(3, 3, 64, 512, 64)) == pytest.approx(-4.76)


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 4096), st.integers(1, 4096), st.integers(1, 4096))
def test_dense_gain_sign_law(n_in, h, n_out):
    g = dense_gain(GainQuery(n_in, h, n_out))
    threshold = n_in * n_out / (n_in + n_out)
    if h * (n_in + n_out) != n_in * n_out:
        assert (g > 0) == (h > threshold)


def _compose_reference(x, K1, b1, K2, b2):
    return full_conv2d_reference(full_conv2d_reference(x, K1, b1), K2, b2)


def test_fuse_conv_one_by_one_is_matmul():
    rng = np.random.default_rng(3)
    K1, K2 = rng.standard_normal((4, 3, 1, 1)), rng.standard_normal((2, 4, 1, 1))
    K, b = fuse_conv(K1, np.zeros(4), K2, np.zeros(2))
    assert K.shape == (2, 3, 1, 1)
    np.testing.assert_allclose(K[:, :, 0, 0], K2[:, :, 0, 0] @ K1[:, :, 0, 0], atol=1e-14)


def test_fuse_conv_three_by_three_fixture():
    rng = np.random.default_rng(4)
    K1, b1 = rng.standard_normal((2, 2, 3, 3)), rng.standard_normal(2)
    K2, b2 = rng.standard_normal((2, 2, 3, 3)), rng.standard_normal(2)
    K, b = fuse_conv(K1, b1, K2, b2)
    assert K.shape == (2, 2, 5, 5)
    x = rng.standard_normal((2, 8, 8))
    diff = np.abs(full_conv2d_reference(x, K, b) - _compose_reference(x, K1, b1, K2, b2)).max()
    assert diff <= 1e-9


def test_fuse_conv_layers_and_stride_rejection():
    rng = np.random.default_rng(5)
    c1 = Conv2dLayer(rng.standard_normal((3, 2, 2, 2)), rng.standard_normal(3))
    c2 = Conv2dLayer(rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4))
    fused = fuse_conv_layers(c1, c2)
    x = Tensor(rng.standard_normal((2, 2, 7, 7)))
    np.testing.assert_allclose(fused.forward(x).data, c2.forward(c1.forward(x)).data, atol=1e-10)
    with pytest.raises(UnsupportedConfigurationError):
        fuse_conv(c1.K.data, c1.b.data, c2.K.data, c2.b.data, stride1=2)


def test_count_identities():
    lin = LinearLayer(np.zeros((5, 10)), np.zeros(5))
    assert count_params(lin) == 55 and count_macs(lin) == 50
    m = ModelGraph([("b", random_block(np.random.default_rng(6), 3, 4, 2, bn=True))], input_shape=(3,))
    assert count_params(m) == 3 * 4 + 4 + 2 * 4 + 1 + 4 * 2 + 2
    assert count_macs(m) == 3 * 4 + 4 * 2
