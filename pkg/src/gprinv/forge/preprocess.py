"""C-scan preprocessing: time-zero alignment, mean removal, scaling, resizing."""
from __future__ import annotations

import numpy as np

from ..errors import ShapeError


def time_zero_correction(c, return_shift=False):
    """Shift all traces by one global lag so the absolute peak of the mean
    trace lands on time index 0; the vacated tail is zero-filled."""
    c = np.asarray(c)
    if c.size == 0:
        raise ShapeError("empty C-scan")
    mean_trace = c.reshape(c.shape[0], -1).mean(axis=1)
    shift = int(np.argmax(np.abs(mean_trace)))
    out = np.zeros_like(c)
    out[: c.shape[0] - shift] = c[shift:]
    return (out, shift) if return_shift else out


def mean_subtraction(c):
    """Remove, at every time sample, the mean over all traces."""
    c = np.asarray(c)
    if c.ndim < 2 or int(np.prod(c.shape[1:])) < 2:
        raise ShapeError("mean subtraction needs at least two traces")
    return c - c.mean(axis=tuple(range(1, c.ndim)), keepdims=True)


def normalize01(c, return_range=False):
    """Affine map of [min, max] onto [0, 1]; a constant volume maps to zeros."""
    c = np.asarray(c, dtype=np.float64)
    if not np.all(np.isfinite(c)):
        raise ValueError("cannot normalise non-finite values")
    lo, hi = float(c.min()), float(c.max())
    out = np.zeros_like(c) if hi == lo else (c - lo) / (hi - lo)
    return (out, (lo, hi)) if return_range else out


def apply_range(c, value_range):
    """Express ``c`` in the normalisation frame returned by ``normalize01``."""
    lo, hi = value_range
    c = np.asarray(c, dtype=np.float64)
    return np.zeros_like(c) if hi == lo else (c - lo) / (hi - lo)


def resize_trilinear(c, target_dims):
    """Separable linear interpolation with corner-aligned sampling: output
    index j along an axis samples input position j * (E - 1) / (T - 1)."""
    out = np.asarray(c, dtype=np.float64)
    if out.ndim != len(target_dims):
        raise ShapeError(f"target dims {target_dims} do not match volume rank {out.ndim}")
    for axis, t in enumerate(target_dims):
        out = _resize_axis(out, axis, int(t))
    return out


def _resize_axis(a, axis, t):
    e = a.shape[axis]
    if t == e:
        return a
    if t < 1:
        raise ShapeError(f"target extent must be >= 1, got {t}")
    a = np.moveaxis(a, axis, 0)
    if e == 1:
        out = np.repeat(a, t, axis=0)
    else:
        pos = np.zeros(1) if t == 1 else np.arange(t) * ((e - 1) / (t - 1))
        i0 = np.minimum(np.floor(pos).astype(np.int64), e - 2)
        frac = (pos - i0).reshape((-1,) + (1,) * (a.ndim - 1))
        out = a[i0] * (1.0 - frac) + a[i0 + 1] * frac
    return np.moveaxis(out, 0, axis)
