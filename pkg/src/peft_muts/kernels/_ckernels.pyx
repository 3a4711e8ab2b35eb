# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled 1-D convolution kernels.

Dense convolutions go through a C im2col/col2im pair around a BLAS matmul;
grouped convolutions with a single input channel per group (depthwise and
channel-multiplier alignment convs) use a direct loop, which avoids many tiny
GEMMs.  Same call signatures as ``_numpy_kernels``.
"""

import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


cdef inline Py_ssize_t _out_length(Py_ssize_t T, Py_ssize_t K, Py_ssize_t stride, Py_ssize_t padding) nogil:
    return (T + 2 * padding - K) // stride + 1


def _im2col(floating[:, :, ::1] x, floating[:, :, ::1] cols,
            Py_ssize_t K, Py_ssize_t stride, Py_ssize_t padding, Py_ssize_t groups):
    cdef Py_ssize_t S = x.shape[0], C_in = x.shape[1], T = x.shape[2]
    cdef Py_ssize_t cig = C_in // groups
    cdef Py_ssize_t T_out = _out_length(T, K, stride, padding)
    cdef Py_ssize_t g, c, k, s, t, src, row, col
    with nogil:
        for g in range(groups):
            for c in range(cig):
                for k in range(K):
                    row = c * K + k
                    for s in range(S):
                        col = s * T_out
                        for t in range(T_out):
                            src = t * stride + k - padding
                            if 0 <= src < T:
                                cols[g, row, col + t] = x[s, g * cig + c, src]
                            else:
                                cols[g, row, col + t] = 0


def _col2im(floating[:, :, ::1] cols, floating[:, :, ::1] gx,
            Py_ssize_t K, Py_ssize_t stride, Py_ssize_t padding, Py_ssize_t groups):
    cdef Py_ssize_t S = gx.shape[0], C_in = gx.shape[1], T = gx.shape[2]
    cdef Py_ssize_t cig = C_in // groups
    cdef Py_ssize_t T_out = _out_length(T, K, stride, padding)
    cdef Py_ssize_t g, c, k, s, t, dst, row, col
    # k outermost per (s, channel) keeps the accumulation order identical to the
    # NumPy fallback's slice-add loop.
    with nogil:
        for g in range(groups):
            for c in range(cig):
                for k in range(K):
                    row = c * K + k
                    for s in range(S):
                        col = s * T_out
                        for t in range(T_out):
                            dst = t * stride + k - padding
                            if 0 <= dst < T:
                                gx[s, g * cig + c, dst] += cols[g, row, col + t]


def _direct_forward(floating[:, :, ::1] x, floating[:, :, ::1] w, floating[:, :, ::1] y,
                    Py_ssize_t stride, Py_ssize_t padding, Py_ssize_t groups):
    cdef Py_ssize_t S = x.shape[0], T = x.shape[2]
    cdef Py_ssize_t C_out = w.shape[0], cig = w.shape[1], K = w.shape[2]
    cdef Py_ssize_t og = C_out // groups
    cdef Py_ssize_t T_out = y.shape[2]
    cdef Py_ssize_t s, o, c, k, t, src, cin
    cdef floating acc
    with nogil:
        for s in range(S):
            for o in range(C_out):
                for t in range(T_out):
                    acc = 0
                    for c in range(cig):
                        cin = (o // og) * cig + c
                        for k in range(K):
                            src = t * stride + k - padding
                            if 0 <= src < T:
                                acc = acc + w[o, c, k] * x[s, cin, src]
                    y[s, o, t] = acc


def _direct_backward(floating[:, :, ::1] x, floating[:, :, ::1] w, floating[:, :, ::1] gy,
                     floating[:, :, ::1] gx, floating[:, :, ::1] gw,
                     Py_ssize_t stride, Py_ssize_t padding, Py_ssize_t groups,
                     bint need_x, bint need_w):
    cdef Py_ssize_t S = x.shape[0], T = x.shape[2]
    cdef Py_ssize_t C_out = w.shape[0], cig = w.shape[1], K = w.shape[2]
    cdef Py_ssize_t og = C_out // groups
    cdef Py_ssize_t T_out = gy.shape[2]
    cdef Py_ssize_t s, o, c, k, t, src, cin
    cdef floating g
    with nogil:
        for s in range(S):
            for o in range(C_out):
                for t in range(T_out):
                    g = gy[s, o, t]
                    for c in range(cig):
                        cin = (o // og) * cig + c
                        for k in range(K):
                            src = t * stride + k - padding
                            if 0 <= src < T:
                                if need_w:
                                    gw[o, c, k] += g * x[s, cin, src]
                                if need_x:
                                    gx[s, cin, src] += g * w[o, c, k]


def _use_direct(cig, og, K):
    return cig * og * K <= 8


def im2col(x, K, stride, padding, groups):
    S, C_in, T = x.shape
    T_out = _out_length(T, K, stride, padding)
    cols = np.empty((groups, (C_in // groups) * K, S * T_out), dtype=x.dtype)
    _im2col(np.ascontiguousarray(x), cols, K, stride, padding, groups)
    return cols


def conv1d_forward(x, w, stride, padding, groups):
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w, dtype=x.dtype)
    S, C_in, T = x.shape
    C_out, cig, K = w.shape
    og = C_out // groups
    T_out = _out_length(T, K, stride, padding)
    if _use_direct(cig, og, K):
        y = np.empty((S, C_out, T_out), dtype=x.dtype)
        _direct_forward(x, w, y, stride, padding, groups)
        return y
    cols = im2col(x, K, stride, padding, groups)
    # one GEMM per stream so identical streams give bitwise identical rows
    cols = np.ascontiguousarray(cols.reshape(groups, cig * K, S, T_out).transpose(2, 0, 1, 3))
    y = np.matmul(w.reshape(1, groups, og, cig * K), cols)
    return y.reshape(S, C_out, T_out)


def conv1d_backward(x, w, gy, stride, padding, groups, need_x=True, need_w=True):
    x = np.ascontiguousarray(x)
    w = np.ascontiguousarray(w, dtype=x.dtype)
    gy = np.ascontiguousarray(gy, dtype=x.dtype)
    S, C_in, T = x.shape
    C_out, cig, K = w.shape
    og = C_out // groups
    T_out = gy.shape[2]
    if _use_direct(cig, og, K):
        gx = np.zeros_like(x)
        gw = np.zeros_like(w)
        _direct_backward(x, w, gy, gx, gw, stride, padding, groups, need_x, need_w)
        return (gx if need_x else None), (gw if need_w else None)
    gym = np.ascontiguousarray(gy.transpose(1, 0, 2)).reshape(groups, og, S * T_out)
    gx = gw = None
    if need_w:
        cols = im2col(x, K, stride, padding, groups)
        gw = np.matmul(gym, cols.transpose(0, 2, 1)).reshape(w.shape)
    if need_x:
        gcols = np.ascontiguousarray(np.matmul(w.reshape(groups, og, cig * K).transpose(0, 2, 1), gym))
        gx = np.zeros_like(x)
        _col2im(gcols, gx, K, stride, padding, groups)
    return gx, gw
