"""Central finite-difference verification of analytic backward passes."""
from __future__ import annotations

import inspect
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .layers import (
    Activation,
    BatchNorm3d,
    Conv3d,
    FullyConnected,
    GlobalAvgPool,
    MaxPool3d,
    Module,
    TransposedConv3d,
)

# relative errors are taken against max(|analytic|, |numeric|, floor) so that
# entries whose true gradient is exactly zero do not divide by ~0; the floor
# grows with the rounding noise of the difference quotient, eps * |f| / step
FLOOR = 1e-7
NOISE_FACTOR = 1e4


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    worst: str
    n_checked: int
    errors: dict = field(default_factory=dict)

    def passed(self, tol):
        return self.max_rel_error < tol


def _backward(layer, g):
    sig = inspect.signature(layer.backward)
    if "need_input_grad" in sig.parameters:
        return layer.backward(g, need_input_grad=True)
    return layer.backward(g)


def grad_check_report(layer, x, step=1e-3, seed=0, name=None, check_input=True, check_params=True):
    """Compare analytic and central-difference gradients of sum(R * layer(x)).

    R is a fixed random weighting of the output, which exercises every
    output element with a distinct sensitivity.
    """
    x = np.array(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    y = np.asarray(layer.forward(x))
    weights = rng.uniform(-1.0, 1.0, size=y.shape)

    def objective():
        return float(np.sum(weights * np.asarray(layer.forward(x))))

    for p in layer.parameters():
        p.zero_grad()
    layer.forward(x)
    d_x = _backward(layer, weights)
    errors = {}
    if check_input:
        errors["input"] = _compare(x, d_x, objective, step)
    if check_params:
        for pname, p in layer.named_parameters():
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            errors[pname] = _compare(p.data, grad, objective, step)
    worst = max(errors, key=errors.get) if errors else ""
    n = x.size + sum(p.size for p in layer.parameters())
    return GradCheckResult(name or type(layer).__name__, errors.get(worst, 0.0), worst, n, errors)


def grad_check(layer, x, step=1e-3, seed=0):
    """Maximum relative error over every input element and parameter."""
    return grad_check_report(layer, x, step=step, seed=seed).max_rel_error


def _compare(arr, analytic, objective, step):
    flat = arr.reshape(-1)
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        fp = objective()
        flat[i] = old - step
        fm = objective()
        flat[i] = old
        num = (fp - fm) / (2 * step)
        floor = max(FLOOR, NOISE_FACTOR * _EPS * max(abs(fp), abs(fm)) / step)
        err = abs(a[i] - num) / max(abs(a[i]), abs(num), floor)
        worst = max(worst, err)
    return worst


_EPS = float(np.finfo(np.float64).eps)


def _nudge_biases(net, rng, scale=0.1):
    # zero biases put ReLU inputs exactly on the kink wherever a 3x3x3 patch
    # of activations is all zero; shift them off it
    for name, p in net.named_parameters():
        if name.endswith("bias"):
            p.data = rng.uniform(-scale, scale, size=p.shape)
    return net


class _Concat(Module):
    """Adapter: splits a channel stack into ``sizes`` then concatenates."""

    def __init__(self, sizes):
        super().__init__()
        self.sizes = sizes

    def forward(self, x):
        parts = np.split(x, np.cumsum(self.sizes)[:-1], axis=-4)
        y, self._cache = ops.concat_channels_forward(parts)
        return y

    def backward(self, g):
        return np.concatenate(ops.concat_channels_backward(g, self._cache), axis=-4)


class _Lossy(Module):
    """Adapter turning a loss function of (pred, truth) into an op of pred."""

    def __init__(self, fn, truth):
        super().__init__()
        self.fn, self.truth = fn, truth

    def forward(self, x):
        value, self._g = self.fn(x, self.truth)
        return np.array(value)

    def backward(self, g):
        return float(g) * self._g


def default_suite(seed=0):
    """(name, layer, input, step, tolerance) cases covering every op and both
    tiny end-to-end networks, all at 64-bit precision."""
    from .denoiser import Denoiser, DenoiserConfig
    from .inverter import Inverter, InverterConfig
    from .trainer import loss_mae, loss_mse

    rng = np.random.default_rng(seed)

    def u(*shape):
        return rng.uniform(-1.0, 1.0, size=shape)

    def away_from_zero(*shape):
        v = u(*shape)
        return np.where(np.abs(v) < 0.05, np.sign(v) * 0.05 + v, v)

    def distinct(*shape):
        # well-separated values so no 2x2x2 block has a near tie
        v = rng.permutation(int(np.prod(shape))).reshape(shape) / np.prod(shape)
        return 2.0 * v - 1.0

    bn = BatchNorm3d(3)
    bn.gamma.data = u(3)
    bn.beta.data = u(3)
    truth = u(2, 3, 4, 4)
    cases = [
        ("conv3d", Conv3d(2, 3, k=3, padding=1, rng=rng), u(2, 4, 4, 4), 1e-3, 1e-4),
        ("conv3d_stride2", Conv3d(2, 2, k=3, stride=2, padding=1, rng=rng), u(2, 5, 5, 5), 1e-3, 1e-4),
        ("transposed_conv3d", TransposedConv3d(3, 2, k=2, stride=2, rng=rng), u(3, 2, 3, 2), 1e-3, 1e-4),
        ("transposed_conv3d_k3s2", TransposedConv3d(2, 2, k=3, stride=2, rng=rng), u(2, 2, 2, 2), 1e-3, 1e-4),
        ("max_pool3d", MaxPool3d(), distinct(2, 4, 4, 4), 1e-3, 1e-4),
        ("global_avg_pool", GlobalAvgPool(), u(3, 3, 4, 2), 1e-3, 1e-4),
        ("fully_connected", FullyConnected(6, 4, rng=rng), u(6), 1e-3, 1e-6),
        ("batch_norm3d", bn, u(2, 3, 3, 3, 3), 1e-3, 1e-4),
        ("relu", Activation("relu"), away_from_zero(2, 3, 3, 3), 1e-3, 1e-4),
        ("sigmoid", Activation("sigmoid"), u(2, 3, 3, 3), 1e-3, 1e-4),
        ("linear", Activation("linear"), u(2, 3, 3, 3), 1e-3, 1e-4),
        ("concat_channels", _Concat([2, 1, 3]), u(6, 2, 3, 2), 1e-3, 1e-4),
        ("loss_mse", _Lossy(loss_mse, truth), u(2, 3, 4, 4), 1e-3, 1e-4),
        ("loss_mae", _Lossy(loss_mae, truth), away_from_zero(2, 3, 4, 4) + truth, 1e-3, 1e-4),
    ]
    den = _nudge_biases(Denoiser(DenoiserConfig(m=1, channels=2, reduction=2), seed=seed + 1), rng)
    inv = _nudge_biases(Inverter(InverterConfig(n=1, channels=2, msfa=True), seed=seed + 2), rng)
    y = rng.uniform(0.0, 1.0, size=(1, 1, 8, 8, 8))
    cases.append(("denoiser_end_to_end", den, y, 1e-5, 1e-3))
    cases.append(("inverter_end_to_end", inv, rng.uniform(0.0, 1.0, size=(2, 1, 8, 8, 8)), 1e-5, 1e-3))
    return cases


def run_suite(seed=0, out=print):
    """Run ``default_suite``; returns (all_passed, results)."""
    results = []
    ok = True
    for name, layer, x, step, tol in default_suite(seed):
        res = grad_check_report(layer, x, step=step, seed=seed, name=name)
        passed = res.passed(tol)
        ok &= passed
        results.append((res, tol, passed))
        if out is not None:
            status = "PASS" if passed else "FAIL"
            out(f"{status}  {name:<26s} max rel err {res.max_rel_error:.3e}  (tol {tol:.0e}, worst: {res.worst})")
    return ok, results
