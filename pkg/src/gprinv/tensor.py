"""Dense tensor carrier and convolution parameter bundle."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError


class Tensor:
    """A dense array with an optional gradient companion of identical shape.

    Feature maps are channel-first (C, D, H, W), optionally with a leading
    batch axis. ``data`` is always a C-contiguous NumPy array.
    """

    __slots__ = ("data", "grad")

    def __init__(self, data, grad=None, dtype=None):
        self.data = np.ascontiguousarray(data, dtype=dtype)
        self.grad = None
        if grad is not None:
            self.set_grad(grad)

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def set_grad(self, grad):
        grad = np.asarray(grad, dtype=self.data.dtype)
        if grad.shape != self.data.shape:
            raise ShapeError(f"gradient shape {grad.shape} does not match data shape {self.data.shape}")
        self.grad = grad

    def accumulate(self, grad):
        if self.grad is None:
            self.set_grad(np.array(grad, dtype=self.data.dtype))
        else:
            self.grad += grad

    def zero_grad(self):
        self.grad = None

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype))

    def copy(self) -> "Tensor":
        t = Tensor(self.data.copy())
        if self.grad is not None:
            t.grad = self.grad.copy()
        return t

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __repr__(self):
        g = "" if self.grad is None else ", grad"
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{g})"


@dataclass
class ConvParams:
    """Kernels (C_out, C_in, k, k, k), bias (C_out,), stride and padding."""

    kernels: Tensor
    bias: Tensor
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        w = self.kernels.shape
        if len(w) != 5 or not (w[2] == w[3] == w[4]):
            raise ShapeError(f"kernels must be (C_out, C_in, k, k, k), got {w}")
        if self.bias.shape != (w[0],):
            raise ShapeError(f"bias shape {self.bias.shape} != ({w[0]},)", axis="C_out")
        if w[2] < 1 or self.stride < 1 or self.padding < 0:
            raise ValueError("require k >= 1, stride >= 1, padding >= 0")

    @property
    def k(self) -> int:
        return self.kernels.shape[2]

    @property
    def c_out(self) -> int:
        return self.kernels.shape[0]

    @property
    def c_in(self) -> int:
        return self.kernels.shape[1]
