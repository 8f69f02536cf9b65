# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: patch gather/scatter for 3D convolution, 2x2x2
max pooling, and Born-model trace accumulation.

Semantics match ``_pykernels`` exactly; reduction order is fixed so results
are reproducible run to run.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, ceil, fabs, llrint
from libc.stdlib cimport malloc, free

ctypedef fused real:
    float
    double

cnp.import_array()


def im2col3d(real[:, :, :, :, ::1] xp, int k, int s, real[:, :, ::1] out):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1]
    cdef Py_ssize_t D = xp.shape[2], H = xp.shape[3], W = xp.shape[4]
    cdef Py_ssize_t do = (D - k) // s + 1
    cdef Py_ssize_t ho = (H - k) // s + 1
    cdef Py_ssize_t wo = (W - k) // s + 1
    cdef Py_ssize_t kk = out.shape[2]
    cdef Py_ssize_t b, ci, a, bb, e, i, j, l
    cdef real *src
    cdef real *dst
    cdef real *base
    with nogil:
        for b in range(n):
            dst = &out[b, 0, 0]
            for i in range(do):
                for j in range(ho):
                    for l in range(wo):
                        base = &xp[b, 0, s * i, s * j, s * l]
                        for ci in range(c):
                            for a in range(k):
                                for bb in range(k):
                                    src = base + ((ci * D + a) * H + bb) * W
                                    for e in range(k):
                                        dst[e] = src[e]
                                    dst = dst + k
    return np.asarray(out)


def col2im3d(real[:, :, ::1] cols, int k, int s, real[:, :, :, :, ::1] out):
    cdef Py_ssize_t n = out.shape[0], c = out.shape[1]
    cdef Py_ssize_t D = out.shape[2], H = out.shape[3], W = out.shape[4]
    cdef Py_ssize_t do = (D - k) // s + 1
    cdef Py_ssize_t ho = (H - k) // s + 1
    cdef Py_ssize_t wo = (W - k) // s + 1
    cdef Py_ssize_t b, ci, a, bb, e, i, j, l
    cdef real *src
    cdef real *dst
    cdef real *base
    with nogil:
        for b in range(n):
            src = &cols[b, 0, 0]
            for i in range(do):
                for j in range(ho):
                    for l in range(wo):
                        base = &out[b, 0, s * i, s * j, s * l]
                        for ci in range(c):
                            for a in range(k):
                                for bb in range(k):
                                    dst = base + ((ci * D + a) * H + bb) * W
                                    for e in range(k):
                                        dst[e] += src[e]
                                    src = src + k
    return np.asarray(out)


def maxpool2_forward(real[:, :, :, :, ::1] x):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1]
    cdef Py_ssize_t d2 = x.shape[2] // 2, h2 = x.shape[3] // 2, w2 = x.shape[4] // 2
    dtype = np.float32 if real is float else np.float64
    y_arr = np.empty((n, c, d2, h2, w2), dtype=dtype)
    idx_arr = np.empty((n, c, d2, h2, w2), dtype=np.uint8)
    cdef real[:, :, :, :, ::1] y = y_arr
    cdef cnp.uint8_t[:, :, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t b, ci, i, j, l, a, bb, e
    cdef int q, best_q
    cdef real v, best
    with nogil:
        for b in range(n):
            for ci in range(c):
                for i in range(d2):
                    for j in range(h2):
                        for l in range(w2):
                            best = x[b, ci, 2 * i, 2 * j, 2 * l]
                            best_q = 0
                            q = 0
                            for a in range(2):
                                for bb in range(2):
                                    for e in range(2):
                                        v = x[b, ci, 2 * i + a, 2 * j + bb, 2 * l + e]
                                        if v > best:
                                            best = v
                                            best_q = q
                                        q = q + 1
                            y[b, ci, i, j, l] = best
                            idx[b, ci, i, j, l] = best_q
    return y_arr, idx_arr


def maxpool2_backward(real[:, :, :, :, ::1] g, cnp.uint8_t[:, :, :, :, ::1] idx):
    cdef Py_ssize_t n = g.shape[0], c = g.shape[1]
    cdef Py_ssize_t d2 = g.shape[2], h2 = g.shape[3], w2 = g.shape[4]
    dtype = np.float32 if real is float else np.float64
    out_arr = np.zeros((n, c, 2 * d2, 2 * h2, 2 * w2), dtype=dtype)
    cdef real[:, :, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ci, i, j, l
    cdef int q
    with nogil:
        for b in range(n):
            for ci in range(c):
                for i in range(d2):
                    for j in range(h2):
                        for l in range(w2):
                            q = idx[b, ci, i, j, l]
                            out[b, ci, 2 * i + (q >> 2), 2 * j + ((q >> 1) & 1), 2 * l + (q & 1)] = g[b, ci, i, j, l]
    return out_arr


def born_accumulate(double[:, ::1] traces, double[:, ::1] tx, double[:, ::1] rx,
                    double[:, ::1] points, double[::1] weights,
                    double velocity, double dt, double t0, double fc, double half_width):
    cdef Py_ssize_t n_tr = traces.shape[0], n_t = traces.shape[1], n_p = points.shape[0]
    cdef Py_ssize_t i, p, m
    cdef long long centre, span, lo, hi
    cdef double dx, dy, dz, r, arrival, amp, tau, arg
    cdef double a = (3.141592653589793 * fc) ** 2
    span = <long long>ceil(half_width / dt) + 1
    with nogil:
        for i in range(n_tr):
            for p in range(n_p):
                dx = points[p, 0] - tx[i, 0]
                dy = points[p, 1] - tx[i, 1]
                dz = points[p, 2] - tx[i, 2]
                r = sqrt(dx * dx + dy * dy + dz * dz)
                dx = points[p, 0] - rx[i, 0]
                dy = points[p, 1] - rx[i, 1]
                dz = points[p, 2] - rx[i, 2]
                r = r + sqrt(dx * dx + dy * dy + dz * dz)
                arrival = t0 + r / velocity
                amp = weights[p] / r
                centre = llrint(arrival / dt)
                lo = centre - span
                hi = centre + span
                if lo < 0:
                    lo = 0
                if hi > n_t - 1:
                    hi = n_t - 1
                for m in range(lo, hi + 1):
                    tau = m * dt - arrival
                    if fabs(tau) <= half_width:
                        arg = a * tau * tau
                        traces[i, m] += (1.0 - 2.0 * arg) * exp(-arg) * amp
    return np.asarray(traces)


def conv3d_direct(real[:, :, :, :, ::1] xp, real[:, :, :, :, ::1] w, real[:, :, :, :, ::1] out):
    """Stride-1 correlation of a padded input, accumulated into ``out``."""
    cdef Py_ssize_t n = xp.shape[0], c_in = xp.shape[1]
    cdef Py_ssize_t c_out = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t do = out.shape[2], ho = out.shape[3], wo = out.shape[4]
    cdef Py_ssize_t b, co, ci, i, j, a, bb, e, l
    cdef real wt
    cdef real *orow
    cdef real *xrow
    with nogil:
        for b in range(n):
            for co in range(c_out):
                for ci in range(c_in):
                    for i in range(do):
                        for j in range(ho):
                            orow = &out[b, co, i, j, 0]
                            for a in range(k):
                                for bb in range(k):
                                    xrow = &xp[b, ci, i + a, j + bb, 0]
                                    for e in range(k):
                                        wt = w[co, ci, a, bb, e]
                                        for l in range(wo):
                                            orow[l] += wt * xrow[l + e]
    return np.asarray(out)


def conv3d_direct_grad_weight(real[:, :, :, :, ::1] xp, real[:, :, :, :, ::1] g, real[:, :, :, :, ::1] dw):
    """dw[co, ci, a, b, e] += sum of g[:, co] * shifted xp[:, ci]."""
    cdef Py_ssize_t n = xp.shape[0], c_in = xp.shape[1]
    cdef Py_ssize_t c_out = dw.shape[0], k = dw.shape[2]
    cdef Py_ssize_t do = g.shape[2], ho = g.shape[3], wo = g.shape[4]
    cdef Py_ssize_t b, co, ci, i, j, a, bb, e, l
    cdef real total
    cdef real *grow
    cdef real *xrow
    # per-lane partial sums keep the inner loop a plain multiply-add
    cdef real *acc = <real *> malloc(wo * sizeof(real))
    if acc == NULL:
        raise MemoryError()
    try:
        with nogil:
            for co in range(c_out):
                for ci in range(c_in):
                    for a in range(k):
                        for bb in range(k):
                            for e in range(k):
                                for l in range(wo):
                                    acc[l] = 0
                                for b in range(n):
                                    for i in range(do):
                                        for j in range(ho):
                                            grow = &g[b, co, i, j, 0]
                                            xrow = &xp[b, ci, i + a, j + bb, e]
                                            for l in range(wo):
                                                acc[l] += grow[l] * xrow[l]
                                total = 0
                                for l in range(wo):
                                    total = total + acc[l]
                                dw[co, ci, a, bb, e] += total
    finally:
        free(acc)
    return np.asarray(dw)
