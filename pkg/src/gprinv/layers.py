"""Stateful layer wrappers and the ``Network`` container.

Each layer caches what its backward pass needs during ``forward`` and
accumulates parameter gradients into its ``Tensor.grad`` during
``backward``. A layer instance may be applied once per forward pass.
"""
from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import ops
from .tensor import Tensor


class Module:
    """Minimal parameter/buffer registry with recursive naming."""

    def __init__(self):
        object.__setattr__(self, "_params", OrderedDict())
        object.__setattr__(self, "_children", OrderedDict())
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._children[name] = value
        object.__setattr__(self, name, value)

    def add_child(self, name, module):
        setattr(self, name, module)
        return module

    def named_parameters(self, prefix=""):
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(prefix + cname + ".")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, b in self._buffers().items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(prefix + cname + ".")

    def _buffers(self):
        return {}

    def _set_buffer(self, name, value):
        raise KeyError(name)

    def modules(self):
        yield self
        for child in self._children.values():
            yield from child.modules()

    def train(self, mode=True):
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv3d(Module):
    def __init__(self, c_in, c_out, k=3, stride=1, padding=1, rng=None, dtype=np.float64):
        super().__init__()
        self.stride, self.padding = stride, padding
        fan_in = c_in * k ** 3
        self.weight = Tensor(_uniform(rng, (c_out, c_in, k, k, k), fan_in, dtype))
        self.bias = Tensor(np.zeros(c_out, dtype=dtype))
        self._cache = None

    def forward(self, x):
        y, self._cache = ops.conv3d_forward(x, self.weight.data, self.bias.data, self.stride, self.padding)
        return y

    def backward(self, g, need_input_grad=True):
        dx, dw, db = ops.conv3d_backward(g, self._cache, need_input_grad)
        self.weight.accumulate(dw)
        self.bias.accumulate(db)
        self._cache = None
        return dx


class TransposedConv3d(Module):
    def __init__(self, c_in, c_out, k=2, stride=2, rng=None, dtype=np.float64):
        super().__init__()
        self.stride = stride
        fan_in = c_in * k ** 3
        self.weight = Tensor(_uniform(rng, (c_out, c_in, k, k, k), fan_in, dtype))
        self.bias = Tensor(np.zeros(c_out, dtype=dtype))
        self._cache = None

    def forward(self, x):
        y, self._cache = ops.transposed_conv3d_forward(x, self.weight.data, self.bias.data, self.stride)
        return y

    def backward(self, g, need_input_grad=True):
        dx, dw, db = ops.transposed_conv3d_backward(g, self._cache, need_input_grad)
        self.weight.accumulate(dw)
        self.bias.accumulate(db)
        self._cache = None
        return dx


class BatchNorm3d(Module):
    def __init__(self, channels, dtype=np.float64):
        super().__init__()
        self.gamma = Tensor(np.ones(channels, dtype=dtype))
        self.beta = Tensor(np.zeros(channels, dtype=dtype))
        self.state = ops.BatchNormState(channels, dtype=dtype)
        self._cache = None

    def forward(self, x):
        y, self._cache = ops.batch_norm3d_forward(x, self.gamma.data, self.beta.data, self.state, self.training)
        return y

    def backward(self, g):
        dx, dg, db = ops.batch_norm3d_backward(g, self._cache)
        self.gamma.accumulate(dg)
        self.beta.accumulate(db)
        self._cache = None
        return dx

    def _buffers(self):
        return {
            "running_mean": self.state.running_mean,
            "running_var": self.state.running_var,
            "tracked": np.array([float(self.state.tracked)]),
        }

    def _set_buffer(self, name, value):
        if name == "tracked":
            self.state.tracked = bool(np.asarray(value).ravel()[0])
        elif name in ("running_mean", "running_var"):
            cur = getattr(self.state, name)
            setattr(self.state, name, np.asarray(value, dtype=cur.dtype).reshape(cur.shape).copy())
        else:
            raise KeyError(name)


class FullyConnected(Module):
    def __init__(self, c_in, c_out, rng=None, dtype=np.float64):
        super().__init__()
        self.weight = Tensor(_uniform(rng, (c_out, c_in), c_in, dtype))
        self.bias = Tensor(np.zeros(c_out, dtype=dtype))
        self._cache = None

    def forward(self, x):
        y, self._cache = ops.fully_connected_forward(x, self.weight.data, self.bias.data)
        return y

    def backward(self, g):
        dx, dw, db = ops.fully_connected_backward(g, self._cache)
        self.weight.accumulate(dw)
        self.bias.accumulate(db)
        self._cache = None
        return dx


class Activation(Module):
    def __init__(self, kind):
        super().__init__()
        self.kind = kind
        self._cache = None

    def forward(self, x):
        y, self._cache = ops.activation_forward(self.kind, x)
        return y

    def backward(self, g):
        dx = ops.activation_backward(g, self._cache)
        self._cache = None
        return dx


class MaxPool3d(Module):
    def forward(self, x):
        y, self._cache = ops.max_pool3d_forward(x)
        return y

    def backward(self, g):
        return ops.max_pool3d_backward(g, self._cache)


class GlobalAvgPool(Module):
    def forward(self, x):
        y, self._cache = ops.global_avg_pool_forward(x)
        return y

    def backward(self, g):
        return ops.global_avg_pool_backward(g, self._cache)


class Network(Module):
    """Base class for the two models: config, registry, state transfer."""

    kind = "network"

    def __init__(self, config):
        super().__init__()
        object.__setattr__(self, "config", config)

    def state_dict(self):
        out = OrderedDict()
        for name, p in self.named_parameters():
            out[name] = p.data.copy()
        return out

    def buffer_dict(self):
        return OrderedDict((name, np.array(b, copy=True)) for name, b in self.named_buffers())

    def load_state_dict(self, params, buffers=None):
        from .errors import ArchitectureMismatchError

        own = dict(self.named_parameters())
        missing = set(own) - set(params)
        extra = set(params) - set(own)
        if missing or extra:
            raise ArchitectureMismatchError(
                f"parameter names differ: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}"
            )
        for name, p in own.items():
            value = np.asarray(params[name])
            if value.shape != p.shape:
                raise ArchitectureMismatchError(f"{name}: stored shape {value.shape} != model shape {p.shape}")
            p.data = np.ascontiguousarray(value, dtype=p.dtype).copy()
        if buffers:
            for name, value in buffers.items():
                mod_name, _, leaf = name.rpartition(".")
                self._resolve(mod_name)._set_buffer(leaf, value)

    def _resolve(self, dotted):
        m = self
        for part in filter(None, dotted.split(".")):
            m = m._children[part]
        return m

    def astype(self, dtype):
        """Cast parameters and statistics in place (e.g. float32 for training)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for m in self.modules():
            if isinstance(m, BatchNorm3d):
                m.state.running_mean = m.state.running_mean.astype(dtype)
                m.state.running_var = m.state.running_var.astype(dtype)
        return self

    @property
    def dtype(self):
        return self.parameters()[0].dtype


def count_parameters(net: Module) -> int:
    """Number of trainable scalars (kernels, biases, BN affine, FC weights)."""
    return int(sum(p.size for p in net.parameters()))


def _uniform(rng, shape, fan_in, dtype):
    if rng is None:
        rng = np.random.default_rng(0)
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
