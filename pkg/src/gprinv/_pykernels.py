"""Pure NumPy implementations of the hot kernels.

These mirror the compiled routines in ``_ckernels.pyx`` one for one and are
used whenever the extension is unavailable (or ``GPRINV_BACKEND=python``).
All array arguments are C-contiguous; outputs are written in place.
"""
import numpy as np


def im2col3d(xp, k, s, out):
    """Gather sliding k^3 patches of a padded (N, C, D, H, W) array.

    ``out`` has shape (N, Do*Ho*Wo, C*k^3): one row per output voxel, each
    row ordered (c, a, b, e).
    """
    n, c = xp.shape[:2]
    do, ho, wo = _out_dims(xp.shape[2:], k, s)
    view = out.reshape(n, do, ho, wo, c, k, k, k)
    for a in range(k):
        for b in range(k):
            for e in range(k):
                patch = xp[:, :, a:a + s * do:s, b:b + s * ho:s, e:e + s * wo:s]
                view[..., a, b, e] = patch.transpose(0, 2, 3, 4, 1)
    return out


def col2im3d(cols, k, s, out):
    """Scatter-add patch columns back onto a padded (N, C, D, H, W) array."""
    n, c = out.shape[:2]
    do, ho, wo = _out_dims(out.shape[2:], k, s)
    view = cols.reshape(n, do, ho, wo, c, k, k, k)
    for a in range(k):
        for b in range(k):
            for e in range(k):
                out[:, :, a:a + s * do:s, b:b + s * ho:s, e:e + s * wo:s] += view[..., a, b, e].transpose(0, 4, 1, 2, 3)
    return out


def conv3d_direct(xp, w, out):
    """Stride-1 correlation of a padded (N, C_in, ...) input, added to ``out``."""
    k = w.shape[2]
    do, ho, wo = out.shape[2:]
    for a in range(k):
        for b in range(k):
            for e in range(k):
                patch = xp[:, :, a:a + do, b:b + ho, e:e + wo]
                out += np.einsum("oc,ncdhw->nodhw", w[:, :, a, b, e], patch)
    return out


def conv3d_direct_grad_weight(xp, g, dw):
    k = dw.shape[2]
    do, ho, wo = g.shape[2:]
    for a in range(k):
        for b in range(k):
            for e in range(k):
                patch = xp[:, :, a:a + do, b:b + ho, e:e + wo]
                dw[:, :, a, b, e] += np.einsum("nodhw,ncdhw->oc", g, patch)
    return dw


def maxpool2_forward(x):
    """2x2x2/stride-2 max pooling; returns (values, flat argmax within block)."""
    n, c, d, h, w = x.shape
    blocks = x.reshape(n, c, d // 2, 2, h // 2, 2, w // 2, 2)
    blocks = blocks.transpose(0, 1, 2, 4, 6, 3, 5, 7).reshape(n, c, d // 2, h // 2, w // 2, 8)
    idx = blocks.argmax(axis=-1).astype(np.uint8)
    y = np.take_along_axis(blocks, idx[..., None].astype(np.intp), axis=-1)[..., 0]
    return np.ascontiguousarray(y), idx


def maxpool2_backward(g, idx):
    n, c, d2, h2, w2 = g.shape
    blocks = np.zeros((n, c, d2, h2, w2, 8), dtype=g.dtype)
    np.put_along_axis(blocks, idx[..., None].astype(np.intp), g[..., None], axis=-1)
    blocks = blocks.reshape(n, c, d2, h2, w2, 2, 2, 2).transpose(0, 1, 2, 5, 3, 6, 4, 7)
    return np.ascontiguousarray(blocks.reshape(n, c, 2 * d2, 2 * h2, 2 * w2))


def born_accumulate(traces, tx, rx, points, weights, velocity, dt, t0, fc, half_width):
    """Add weighted, delayed Ricker wavelets onto ``traces`` (n_traces, n_t).

    For every (trace, scatterer) pair the two-way path R = |tx-p| + |p-rx|
    gives delay R/velocity and amplitude weight/R. Only samples within
    ``half_width`` seconds of the arrival are touched.
    """
    n_t = traces.shape[1]
    t = np.arange(n_t) * dt
    span = int(np.ceil(half_width / dt)) + 1
    offs = np.arange(-span, span + 1)
    a = (np.pi * fc) ** 2
    for i in range(traces.shape[0]):
        r = np.sqrt(((points - tx[i]) ** 2).sum(axis=1)) + np.sqrt(((points - rx[i]) ** 2).sum(axis=1))
        arrival = t0 + r / velocity
        amp = weights / r
        centre = np.rint(arrival / dt).astype(np.int64)
        idx = centre[:, None] + offs[None, :]
        valid = (idx >= 0) & (idx < n_t)
        tau = np.where(valid, t[np.clip(idx, 0, n_t - 1)], 0.0) - arrival[:, None]
        arg = a * tau * tau
        wav = (1.0 - 2.0 * arg) * np.exp(-arg) * amp[:, None]
        wav[~valid | (np.abs(tau) > half_width)] = 0.0
        np.add.at(traces[i], idx[valid], wav[valid])
    return traces


def _out_dims(dims, k, s):
    return tuple((e - k) // s + 1 for e in dims)
