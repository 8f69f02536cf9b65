"""Differentiable layer operations with hand-written backward passes.

Every ``*_forward`` takes NumPy arrays and returns ``(output, cache)``; the
matching ``*_backward`` consumes the upstream gradient and the cache.
Feature maps are batched (N, C, D, H, W). Unbatched (C, D, H, W) arrays are
accepted by the forward functions and promoted to N=1; the cache remembers
this so gradients come back in the caller's layout.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ShapeError, StatisticsError
from .tensor import ConvParams, Tensor

_AXES = ("D", "H", "W")

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _as5d(x):
    x = np.asarray(x)
    if x.ndim == 4:
        return np.ascontiguousarray(x[None]), True
    if x.ndim == 5:
        return np.ascontiguousarray(x), False
    raise ShapeError(f"expected (C, D, H, W) or (N, C, D, H, W), got shape {x.shape}")


def _restore(x, squeezed):
    return x[0] if squeezed else x


def conv_output_extent(e, k, s, p, axis="D"):
    span = e + 2 * p - k
    if span < 0:
        raise ShapeError(f"axis {axis}: padded extent {e + 2 * p} is smaller than kernel {k}", axis=axis)
    if span % s:
        raise ShapeError(f"axis {axis}: (extent + 2p - k) = {span} is not divisible by stride {s}", axis=axis)
    return span // s + 1


# ----------------------------------------------------------------------------
# convolution

def _direct_ok(k, stride, padding):
    return stride == 1 and padding <= k - 1


def conv3d_forward(x, weight, bias, stride=1, padding=0):
    x, squeezed = _as5d(x)
    n, c_in = x.shape[:2]
    c_out, wc_in, k = weight.shape[0], weight.shape[1], weight.shape[2]
    if c_in != wc_in:
        raise ShapeError(f"axis C: input has {c_in} channels, kernel expects {wc_in}", axis="C")
    out_dims = tuple(conv_output_extent(e, k, stride, padding, a) for e, a in zip(x.shape[2:], _AXES))
    xp = np.pad(x, ((0, 0), (0, 0)) + ((padding, padding),) * 3) if padding else x
    xp = np.ascontiguousarray(xp)
    weight = np.ascontiguousarray(weight)
    if _direct_ok(k, stride, padding):
        # stride 1: sliding dot products straight off the padded input,
        # no column buffer
        out = np.empty((n, c_out) + out_dims, dtype=x.dtype)
        out[...] = bias.reshape(1, c_out, 1, 1, 1)
        kernels.conv3d_direct(xp, weight, out)
        cache = ("direct", xp, x.shape, weight, stride, padding, squeezed)
        return _restore(out, squeezed), cache
    # strided: patch-major columns (N, P, C_in*k^3)
    cols = np.empty((n, int(np.prod(out_dims)), c_in * k ** 3), dtype=x.dtype)
    kernels.im2col3d(xp, k, stride, cols)
    w2 = weight.reshape(c_out, -1)
    out = np.ascontiguousarray(np.matmul(cols, w2.T).transpose(0, 2, 1))
    out += bias[:, None]
    out = out.reshape((n, c_out) + out_dims)
    cache = ("cols", cols, x.shape, weight, stride, padding, squeezed)
    return _restore(out, squeezed), cache


def conv3d_backward(grad_out, cache, need_input_grad=True):
    """Return (d_input, d_weight, d_bias); d_input is None if not requested."""
    mode, data, x_shape, weight, stride, padding, squeezed = cache
    n = x_shape[0]
    c_out, c_in, k = weight.shape[0], weight.shape[1], weight.shape[2]
    g5 = np.ascontiguousarray(np.asarray(grad_out).reshape((n, c_out) + np.shape(grad_out)[-3:]))
    d_bias = g5.sum(axis=(0, 2, 3, 4))
    d_x = None
    if mode == "direct":
        d_weight = np.zeros(weight.shape, dtype=g5.dtype)
        kernels.conv3d_direct_grad_weight(data, g5, d_weight)
        if need_input_grad:
            # the input gradient is itself a stride-1 correlation: pad g by
            # k-1-p and apply the flipped, channel-swapped kernel
            q = k - 1 - padding
            gp = np.pad(g5, ((0, 0), (0, 0)) + ((q, q),) * 3) if q else g5
            w_flip = np.ascontiguousarray(weight[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4))
            d_x = np.zeros((n, c_in) + tuple(x_shape[2:]), dtype=g5.dtype)
            kernels.conv3d_direct(np.ascontiguousarray(gp), w_flip, d_x)
            d_x = _restore(d_x, squeezed)
        return d_x, d_weight, d_bias
    cols = data
    g = g5.reshape(n, c_out, -1)
    g_t = np.ascontiguousarray(g.transpose(0, 2, 1))
    d_weight = np.ascontiguousarray(_batched_tn(cols, g_t).T.reshape(weight.shape))
    if need_input_grad:
        d_cols = np.matmul(g_t, weight.reshape(c_out, -1))
        padded = tuple(e + 2 * padding for e in x_shape[2:])
        d_xp = np.zeros(x_shape[:2] + padded, dtype=g.dtype)
        kernels.col2im3d(d_cols, k, stride, d_xp)
        if padding:
            p = padding
            d_xp = d_xp[:, :, p:-p, p:-p, p:-p]
        d_x = _restore(np.ascontiguousarray(d_xp), squeezed)
    return d_x, d_weight, d_bias


def _batched_tn(a, b):
    """sum_i a[i].T @ b[i] for (N, P, K) and (N, P, M) stacks."""
    out = a[0].T @ b[0]
    for i in range(1, a.shape[0]):
        out += a[i].T @ b[i]
    return out


def transposed_conv3d_forward(x, weight, bias, stride=2):
    """Transposed convolution, padding 0; weight is (C_out, C_in, k, k, k).

    Output extent per axis is (E - 1) * stride + k. Overlapping kernels
    (k > stride) are handled by the same scatter-add.
    """
    x, squeezed = _as5d(x)
    n, c_in = x.shape[:2]
    c_out, wc_in, k = weight.shape[0], weight.shape[1], weight.shape[2]
    if c_in != wc_in:
        raise ShapeError(f"axis C: input has {c_in} channels, kernel expects {wc_in}", axis="C")
    out_dims = tuple((e - 1) * stride + k for e in x.shape[2:])
    wm = weight.transpose(0, 2, 3, 4, 1).reshape(c_out * k ** 3, c_in)
    x_t = np.ascontiguousarray(x.reshape(n, c_in, -1).transpose(0, 2, 1))
    cols = np.matmul(x_t, wm.T)
    out = np.zeros((n, c_out) + out_dims, dtype=x.dtype)
    kernels.col2im3d(cols, k, stride, out)
    out += bias[None, :, None, None, None]
    return _restore(out, squeezed), (x_t, x.shape, weight, stride, squeezed)


def transposed_conv3d_backward(grad_out, cache, need_input_grad=True):
    x_t, x_shape, weight, stride, squeezed = cache
    n, c_in = x_shape[:2]
    c_out, k = weight.shape[0], weight.shape[2]
    g, _ = _as5d(grad_out)
    d_cols = np.empty((n, int(np.prod(x_shape[2:])), c_out * k ** 3), dtype=g.dtype)
    kernels.im2col3d(g, k, stride, d_cols)
    d_wm = _batched_tn(d_cols, x_t)
    d_weight = d_wm.reshape(c_out, k, k, k, c_in).transpose(0, 4, 1, 2, 3)
    d_bias = g.sum(axis=(0, 2, 3, 4))
    d_x = None
    if need_input_grad:
        wm = weight.transpose(0, 2, 3, 4, 1).reshape(c_out * k ** 3, c_in)
        d_x = np.matmul(d_cols, wm).transpose(0, 2, 1).reshape(x_shape)
        d_x = _restore(np.ascontiguousarray(d_x), squeezed)
    return d_x, np.ascontiguousarray(d_weight), d_bias


# ----------------------------------------------------------------------------
# pooling

def max_pool3d_forward(x):
    x, squeezed = _as5d(x)
    for e, a in zip(x.shape[2:], _AXES):
        if e % 2:
            raise ShapeError(f"axis {a}: extent {e} is odd; 2x2x2 pooling needs even extents", axis=a)
    y, idx = kernels.maxpool2_forward(x)
    return _restore(y, squeezed), (idx, squeezed)


def max_pool3d_backward(grad_out, cache):
    idx, squeezed = cache
    g, _ = _as5d(grad_out)
    return _restore(kernels.maxpool2_backward(g, idx), squeezed)


def global_avg_pool_forward(x):
    """Channel means over all spatial voxels: (N, C, D, H, W) -> (N, C)."""
    x, squeezed = _as5d(x)
    if min(x.shape[2:]) < 1:
        raise ShapeError("global average pooling needs non-empty spatial extents")
    y = x.mean(axis=(2, 3, 4))
    return _restore(y, squeezed), (x.shape, squeezed)


def global_avg_pool_backward(grad_out, cache):
    shape, squeezed = cache
    g = np.asarray(grad_out).reshape(shape[0], shape[1], 1, 1, 1)
    vol = shape[2] * shape[3] * shape[4]
    d = np.broadcast_to(g / vol, shape).copy()
    return _restore(d, squeezed)


# ----------------------------------------------------------------------------
# dense

def fully_connected_forward(x, weight, bias):
    """Affine map on the last axis; weight is (C_out, C_in)."""
    x = np.asarray(x)
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"input width {x.shape[-1]} != weight C_in {weight.shape[1]}", axis="C_in")
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} != ({weight.shape[0]},)", axis="C_out")
    return x @ weight.T + bias, (x, weight)


def fully_connected_backward(grad_out, cache):
    x, weight = cache
    g = np.asarray(grad_out)
    d_x = g @ weight
    g2 = g.reshape(-1, g.shape[-1])
    x2 = x.reshape(-1, x.shape[-1])
    return d_x, g2.T @ x2, g2.sum(axis=0)


# ----------------------------------------------------------------------------
# batch norm

class BatchNormState:
    """Running statistics for one batch-norm layer."""

    def __init__(self, channels, dtype=np.float64, momentum=BN_MOMENTUM, eps=BN_EPS):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self.tracked = False


def batch_norm3d_forward(x, gamma, beta, state: BatchNormState, train=True):
    x, squeezed = _as5d(x)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"axis C: affine parameters must have shape ({c},)", axis="C")
    bshape = (1, c, 1, 1, 1)
    if train:
        mean = x.mean(axis=(0, 2, 3, 4))
        xc = x - mean.reshape(bshape)
        var = (xc * xc).mean(axis=(0, 2, 3, 4))
        # running variance is the biased batch variance, so inference on a
        # batch seen with momentum 1 reproduces the training-mode output
        m = state.momentum
        state.running_mean = ((1 - m) * state.running_mean + m * mean).astype(state.running_mean.dtype)
        state.running_var = ((1 - m) * state.running_var + m * var).astype(state.running_var.dtype)
        state.tracked = True
    else:
        if not state.tracked:
            raise StatisticsError("batch norm in inference mode has no accumulated running statistics")
        mean = state.running_mean.astype(x.dtype)
        var = state.running_var.astype(x.dtype)
        xc = x - mean.reshape(bshape)
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = xc * inv_std.reshape(bshape)
    out = xhat * gamma.reshape(bshape) + beta.reshape(bshape)
    return _restore(out, squeezed), (xhat, inv_std, gamma, train, squeezed)


def batch_norm3d_backward(grad_out, cache):
    xhat, inv_std, gamma, train, squeezed = cache
    g, _ = _as5d(grad_out)
    c = g.shape[1]
    bshape = (1, c, 1, 1, 1)
    axes = (0, 2, 3, 4)
    d_beta = g.sum(axis=axes)
    d_gamma = (g * xhat).sum(axis=axes)
    gx = g * gamma.reshape(bshape)
    if train:
        cnt = g.size // c
        d_x = (inv_std.reshape(bshape) / cnt) * (
            cnt * gx - gx.sum(axis=axes).reshape(bshape) - xhat * (gx * xhat).sum(axis=axes).reshape(bshape)
        )
    else:
        d_x = gx * inv_std.reshape(bshape)
    return _restore(d_x, squeezed), d_gamma, d_beta


# ----------------------------------------------------------------------------
# activations and plumbing

def activation_forward(kind, x):
    x = np.asarray(x)
    if kind == "relu":
        y = np.maximum(x, 0)
        return y, (kind, x > 0)
    if kind == "sigmoid":
        y = _sigmoid(x)
        return y, (kind, y)
    if kind == "linear":
        return x, (kind, None)
    raise ValueError(f"unknown activation {kind!r}")


def activation_backward(grad_out, cache):
    kind, saved = cache
    if kind == "relu":
        return grad_out * saved
    if kind == "sigmoid":
        return grad_out * saved * (1 - saved)
    return grad_out


def _sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def concat_channels_forward(inputs):
    arrays = [_as5d(a) for a in inputs]
    squeezed = arrays[0][1]
    arrays = [a for a, _ in arrays]
    ref = arrays[0].shape
    for i, a in enumerate(arrays[1:], 1):
        if a.shape[0] != ref[0]:
            raise ShapeError(f"input {i}: batch size {a.shape[0]} != {ref[0]}", axis="N")
        for e, r, ax in zip(a.shape[2:], ref[2:], _AXES):
            if e != r:
                raise ShapeError(f"input {i}: axis {ax} extent {e} != {r}", axis=ax)
    out = np.concatenate(arrays, axis=1)
    return _restore(out, squeezed), ([a.shape[1] for a in arrays], squeezed)


def concat_channels_backward(grad_out, cache):
    sizes, squeezed = cache
    g, _ = _as5d(grad_out)
    splits = np.cumsum(sizes)[:-1]
    return [_restore(np.ascontiguousarray(p), squeezed) for p in np.split(g, splits, axis=1)]


# ----------------------------------------------------------------------------
# Tensor-level conveniences

def conv3d(x: Tensor, params: ConvParams) -> Tensor:
    out, _ = conv3d_forward(
        np.asarray(x), params.kernels.data, params.bias.data, params.stride, params.padding
    )
    return Tensor(out)


def transposed_conv3d(x: Tensor, params: ConvParams) -> Tensor:
    out, _ = transposed_conv3d_forward(np.asarray(x), params.kernels.data, params.bias.data, params.stride)
    return Tensor(out)


def max_pool3d(x: Tensor) -> Tensor:
    return Tensor(max_pool3d_forward(np.asarray(x))[0])


def global_avg_pool(x: Tensor) -> Tensor:
    return Tensor(global_avg_pool_forward(np.asarray(x))[0])


def fully_connected(x, weight, bias) -> Tensor:
    return Tensor(fully_connected_forward(np.asarray(x), np.asarray(weight), np.asarray(bias))[0])


def activation(kind, x) -> Tensor:
    return Tensor(activation_forward(kind, np.asarray(x))[0])


def concat_channels(inputs) -> Tensor:
    return Tensor(concat_channels_forward([np.asarray(t) for t in inputs])[0])
