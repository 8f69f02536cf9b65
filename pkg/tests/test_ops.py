import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gprinv import ops
from gprinv.errors import ShapeError, StatisticsError
from gprinv.gradcheck import grad_check
from gprinv.layers import (
    Activation, BatchNorm3d, Conv3d, FullyConnected, GlobalAvgPool, MaxPool3d, TransposedConv3d,
    count_parameters,
)
from gprinv.tensor import ConvParams, Tensor

import oracles


def _conv(x, w, b, s=1, p=0):
    return ops.conv3d_forward(x, w, b, s, p)[0]


# ---------------------------------------------------------------- Tensor types

def test_tensor_grad_shape_must_match():
    t = Tensor(np.zeros((2, 3)))
    with pytest.raises(ShapeError):
        t.set_grad(np.zeros(6))
    t.set_grad(np.ones((2, 3)))
    assert t.grad.shape == t.shape and t.size == 6


def test_conv_params_invariants():
    with pytest.raises(ShapeError):
        ConvParams(Tensor(np.zeros((2, 1, 3, 3, 3))), Tensor(np.zeros(3)))
    with pytest.raises(ValueError):
        ConvParams(Tensor(np.zeros((2, 1, 3, 3, 3))), Tensor(np.zeros(2)), stride=0)
    p = ConvParams(Tensor(np.zeros((2, 1, 3, 3, 3))), Tensor(np.zeros(2)), padding=1)
    assert (p.k, p.c_out, p.c_in) == (3, 2, 1)


# ---------------------------------------------------------------- conv3d

def test_conv3d_ones_sum_to_27():
    out = ops.conv3d(Tensor(np.ones((1, 3, 3, 3))),
                     ConvParams(Tensor(np.ones((1, 1, 3, 3, 3))), Tensor(np.zeros(1))))
    assert out.shape == (1, 1, 1, 1)
    assert float(np.asarray(out).ravel()[0]) == 27.0


def test_conv3d_zero_kernel_gives_zero(rng):
    out = _conv(rng.normal(size=(2, 4, 5, 6)), np.zeros((3, 2, 3, 3, 3)), np.zeros(3), 1, 1)
    assert out.shape == (3, 4, 5, 6) and not out.any()


def test_conv3d_matches_loop_oracle(rng):
    x = rng.normal(size=(2, 5, 5, 5))
    w = rng.normal(size=(3, 2, 3, 3, 3))
    b = rng.normal(size=3)
    np.testing.assert_allclose(_conv(x, w, b, 1, 1), oracles.conv3d_loops(x, w, b, 1, 1), rtol=0, atol=1e-12)


@pytest.mark.parametrize("k,s,p", [(3, 2, 1), (1, 1, 0), (2, 1, 0), (3, 1, 2), (3, 2, 0)])
def test_conv3d_other_geometries_match_oracle(rng, k, s, p):
    x = rng.normal(size=(2, 7, 7, 7))
    w = rng.normal(size=(2, 2, k, k, k))
    b = rng.normal(size=2)
    np.testing.assert_allclose(_conv(x, w, b, s, p), oracles.conv3d_loops(x, w, b, s, p), atol=1e-12)


def test_conv3d_batched_equals_per_sample(rng):
    x = rng.normal(size=(3, 2, 4, 4, 4))
    w, b = rng.normal(size=(2, 2, 3, 3, 3)), rng.normal(size=2)
    batched = _conv(x, w, b, 1, 1)
    for i in range(3):
        np.testing.assert_allclose(batched[i], _conv(x[i], w, b, 1, 1), atol=1e-13)


def test_conv3d_shape_errors_name_axis(rng):
    with pytest.raises(ShapeError) as e:
        _conv(rng.normal(size=(3, 4, 4, 4)), np.zeros((1, 2, 3, 3, 3)), np.zeros(1))
    assert e.value.axis == "C"
    with pytest.raises(ShapeError) as e:
        _conv(rng.normal(size=(1, 4, 2, 4)), np.zeros((1, 1, 3, 3, 3)), np.zeros(1))
    assert e.value.axis == "H"
    with pytest.raises(ShapeError) as e:
        _conv(rng.normal(size=(1, 4, 4, 6)), np.zeros((1, 1, 3, 3, 3)), np.zeros(1), 2, 0)
    assert e.value.axis == "D"


def test_conv3d_homogeneous(rng):
    x = rng.normal(size=(2, 4, 4, 4))
    w = rng.normal(size=(2, 2, 3, 3, 3))
    alpha = float(rng.uniform(-3, 3))
    np.testing.assert_allclose(_conv(alpha * x, w, np.zeros(2), 1, 1),
                               alpha * _conv(x, w, np.zeros(2), 1, 1), atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(d=st.integers(1, 6), h=st.integers(1, 6), w=st.integers(1, 6))
def test_conv3d_same_padding_preserves_extents(d, h, w):
    x = np.ones((1, d, h, w))
    assert _conv(x, np.ones((2, 1, 3, 3, 3)), np.zeros(2), 1, 1).shape == (2, d, h, w)


# ---------------------------------------------------------------- transposed conv

def test_tconv_ones_fill_ones():
    out = ops.transposed_conv3d(Tensor(np.ones((1, 2, 2, 2))),
                                ConvParams(Tensor(np.ones((1, 1, 2, 2, 2))), Tensor(np.zeros(1)), stride=2))
    np.testing.assert_array_equal(np.asarray(out), np.ones((1, 4, 4, 4)))


def test_tconv_zero_kernel(rng):
    out = ops.transposed_conv3d_forward(rng.normal(size=(2, 3, 2, 4)), np.zeros((3, 2, 2, 2, 2)), np.zeros(3))[0]
    assert out.shape == (3, 6, 4, 8) and not out.any()


@pytest.mark.parametrize("k,s", [(2, 2), (3, 2), (1, 2), (2, 1)])
def test_tconv_matches_scatter_oracle(rng, k, s):
    x = rng.normal(size=(2, 3, 2, 3))
    w = rng.normal(size=(3, 2, k, k, k))
    b = rng.normal(size=3)
    got = ops.transposed_conv3d_forward(x, w, b, s)[0]
    np.testing.assert_allclose(got, oracles.tconv3d_loops(x, w, b, s), atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(d=st.integers(1, 5), h=st.integers(1, 5), w=st.integers(1, 5))
def test_tconv_doubles_extents(d, h, w):
    out = ops.transposed_conv3d_forward(np.ones((1, d, h, w)), np.ones((1, 1, 2, 2, 2)), np.zeros(1))[0]
    assert out.shape == (1, 2 * d, 2 * h, 2 * w)
    np.testing.assert_array_equal(out, 1.0)  # one contribution per voxel


# ---------------------------------------------------------------- pooling

def test_maxpool_block_of_1_to_8():
    x = np.arange(1.0, 9.0).reshape(1, 2, 2, 2)
    assert ops.max_pool3d_forward(x)[0].ravel().tolist() == [8.0]


def test_maxpool_constant(rng):
    np.testing.assert_array_equal(ops.max_pool3d_forward(np.full((2, 4, 6, 2), 3.5))[0], 3.5)


def test_maxpool_matches_loops(rng):
    x = rng.normal(size=(3, 4, 6, 2))
    np.testing.assert_array_equal(ops.max_pool3d_forward(x)[0], oracles.maxpool_loops(x))


def test_maxpool_gradient_routes_to_argmax(rng):
    x = rng.permutation(2 * 4 * 4 * 4).reshape(2, 4, 4, 4).astype(float)
    y, cache = ops.max_pool3d_forward(x)
    g = ops.max_pool3d_backward(np.ones_like(y), cache)
    expect = np.zeros_like(x)
    for c in range(2):
        for i in range(2):
            for j in range(2):
                for l in range(2):
                    blk = x[c, 2 * i:2 * i + 2, 2 * j:2 * j + 2, 2 * l:2 * l + 2]
                    a, b, e = np.unravel_index(np.argmax(blk), blk.shape)
                    expect[c, 2 * i + a, 2 * j + b, 2 * l + e] = 1.0
    np.testing.assert_array_equal(g, expect)
    # finite differences agree at these non-tied points
    h = 1e-3
    for idx in [(0, 0, 0, 0), tuple(np.argwhere(expect)[3])]:
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        fd = (ops.max_pool3d_forward(xp)[0].sum() - ops.max_pool3d_forward(xm)[0].sum()) / (2 * h)
        assert fd == pytest.approx(g[idx], abs=1e-9)


def test_maxpool_ties_go_to_first_occurrence():
    x = np.zeros((1, 2, 2, 2))
    y, cache = ops.max_pool3d_forward(x)
    g = ops.max_pool3d_backward(np.ones_like(y), cache)
    assert g[0, 0, 0, 0] == 1.0 and g.sum() == 1.0


def test_maxpool_odd_extent_rejected():
    with pytest.raises(ShapeError) as e:
        ops.max_pool3d_forward(np.zeros((1, 4, 3, 4)))
    assert e.value.axis == "H"


def test_gap_examples(rng):
    assert ops.global_avg_pool_forward(np.full((1, 3, 2, 5), 2.25))[0].tolist() == [2.25]
    assert ops.global_avg_pool_forward(np.arange(1.0, 9.0).reshape(1, 2, 2, 2))[0].tolist() == [4.5]
    x = rng.normal(size=(3, 4, 3, 5))
    np.testing.assert_allclose(ops.global_avg_pool_forward(x)[0], oracles.gap_loops(x), atol=1e-12)


# ---------------------------------------------------------------- FC

def test_fc_examples(rng):
    x, b = rng.normal(size=5), rng.normal(size=3)
    np.testing.assert_array_equal(ops.fully_connected_forward(x, np.zeros((3, 5)), b)[0], b)
    np.testing.assert_array_equal(ops.fully_connected_forward(x, np.eye(5), np.zeros(5))[0], x)
    w = rng.normal(size=(3, 5))
    np.testing.assert_allclose(ops.fully_connected_forward(x, w, b)[0], oracles.fc_loops(x, w, b), atol=1e-12)
    with pytest.raises(ShapeError):
        ops.fully_connected_forward(x, np.zeros((3, 4)), b)


# ---------------------------------------------------------------- batch norm

def test_bn_train_mode_normalises(rng):
    x = rng.normal(3.0, 2.0, size=(2, 3, 4, 4, 4))
    y, _ = ops.batch_norm3d_forward(x, np.ones(3), np.zeros(3), ops.BatchNormState(3))
    assert np.all(np.abs(y.mean(axis=(0, 2, 3, 4))) < 1e-6)
    assert np.all(np.abs(y.var(axis=(0, 2, 3, 4)) - 1) < 1e-4)


def test_bn_constant_channels_give_zero():
    x = np.broadcast_to(np.array([1.0, -2.0, 7.0]).reshape(3, 1, 1, 1), (3, 2, 2, 2)).copy()
    y, _ = ops.batch_norm3d_forward(x, np.ones(3), np.zeros(3), ops.BatchNormState(3))
    np.testing.assert_array_equal(y, 0.0)


def test_bn_momentum_one_infer_reproduces_train(rng):
    x = rng.normal(size=(2, 3, 3, 3, 3))
    g, b = rng.normal(size=3), rng.normal(size=3)
    st_ = ops.BatchNormState(3, momentum=1.0)
    y_train, _ = ops.batch_norm3d_forward(x, g, b, st_, train=True)
    ops.batch_norm3d_forward(x, g, b, st_, train=True)
    y_inf, _ = ops.batch_norm3d_forward(x, g, b, st_, train=False)
    np.testing.assert_allclose(y_inf, y_train, atol=1e-5)


def test_bn_infer_without_statistics_fails(rng):
    with pytest.raises(StatisticsError):
        ops.batch_norm3d_forward(rng.normal(size=(2, 2, 2, 2)), np.ones(2), np.zeros(2),
                                 ops.BatchNormState(2), train=False)


# ---------------------------------------------------------------- activations, concat

def test_activation_examples(rng):
    assert ops.activation("relu", np.array([-1.0, 2.0])).data.tolist() == [0.0, 2.0]
    assert np.asarray(ops.activation("sigmoid", np.array([0.0]))).tolist() == [0.5]
    x = rng.normal(size=(3, 4))
    np.testing.assert_array_equal(np.asarray(ops.activation("linear", x)), x)
    _, cache = ops.activation_forward("relu", np.array([0.0]))
    assert ops.activation_backward(np.array([1.0]), cache)[0] == 0.0
    _, cache = ops.activation_forward("sigmoid", np.array([0.0]))
    assert ops.activation_backward(np.array([1.0]), cache)[0] == 0.25
    with pytest.raises(ValueError):
        ops.activation_forward("tanh", x)


def test_sigmoid_extremes_are_finite():
    y = ops.activation_forward("sigmoid", np.array([-1000.0, 1000.0]))[0]
    assert y.tolist() == [0.0, 1.0]


def test_concat_examples(rng):
    parts = [rng.normal(size=(8, 2, 3, 4)) for _ in range(3)]
    y, cache = ops.concat_channels_forward(parts)
    assert y.shape == (24, 2, 3, 4)
    np.testing.assert_array_equal(y[:8], parts[0])
    back = ops.concat_channels_backward(y, cache)
    for a, b in zip(back, parts):
        np.testing.assert_array_equal(a, b)
    with pytest.raises(ShapeError) as e:
        ops.concat_channels_forward([parts[0], rng.normal(size=(2, 2, 3, 5))])
    assert e.value.axis == "W"


# ---------------------------------------------------------------- grad_check

def test_grad_check_conv3d(rng):
    x = rng.uniform(-1, 1, size=(2, 4, 4, 4))
    assert grad_check(Conv3d(2, 3, rng=rng), x, step=1e-3) < 1e-4


def test_grad_check_fc(rng):
    assert grad_check(FullyConnected(5, 3, rng=rng), rng.uniform(-1, 1, size=5), step=1e-3) < 1e-6


@pytest.mark.parametrize("layer,shape", [
    (TransposedConv3d(2, 2, rng=np.random.default_rng(0)), (2, 2, 2, 3)),
    (GlobalAvgPool(), (2, 3, 2, 3)),
    (Activation("sigmoid"), (2, 2, 2, 2)),
    (BatchNorm3d(2), (2, 2, 3, 3, 3)),
])
def test_grad_check_other_ops(rng, layer, shape):
    assert grad_check(layer, rng.uniform(-1, 1, size=shape)) < 1e-4


def test_grad_check_maxpool_away_from_ties(rng):
    x = rng.permutation(64).reshape(1, 4, 4, 4) / 64.0
    assert grad_check(MaxPool3d(), x) < 1e-4


# ---------------------------------------------------------------- parameter counting

def test_count_single_conv():
    assert count_parameters(Conv3d(1, 8)) == 224


def test_count_independent_of_values(rng):
    a, b = Conv3d(3, 5, rng=np.random.default_rng(0)), Conv3d(3, 5, rng=np.random.default_rng(9))
    b.weight.data[:] = 0
    assert count_parameters(a) == count_parameters(b) == 5 * 3 * 27 + 5
