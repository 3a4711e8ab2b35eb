"""Pure-NumPy 1-D convolution kernels (im2col + batched GEMM).

Layouts: ``x`` is ``(S, C_in, T)``, ``w`` is ``(C_out, C_in // groups, K)``.
Columns are ``(groups, C_in // groups * K, S * T_out)``; the forward pass
regroups them per stream so every stream runs through an identical GEMM.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def out_length(T, K, stride, padding):
    return (T + 2 * padding - K) // stride + 1


def im2col(x, K, stride, padding, groups):
    S, C_in, T = x.shape
    cig = C_in // groups
    T_out = out_length(T, K, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    win = sliding_window_view(x, K, axis=2)[:, :, : stride * (T_out - 1) + 1 : stride, :]
    # (S, g, cig, T_out, K) -> (g, cig, K, S, T_out)
    win = win.reshape(S, groups, cig, T_out, K).transpose(1, 2, 4, 0, 3)
    return np.ascontiguousarray(win).reshape(groups, cig * K, S * T_out)


def col2im(cols, S, C_in, T, K, stride, padding, groups):
    cig = C_in // groups
    T_out = out_length(T, K, stride, padding)
    c = cols.reshape(groups, cig, K, S, T_out).transpose(3, 0, 1, 2, 4).reshape(S, C_in, K, T_out)
    gxp = np.zeros((S, C_in, T + 2 * padding), dtype=cols.dtype)
    span = stride * (T_out - 1) + 1
    for k in range(K):
        gxp[:, :, k : k + span : stride] += c[:, :, k, :]
    if padding:
        return np.ascontiguousarray(gxp[:, :, padding : padding + T])
    return gxp


def conv1d_forward(x, w, stride, padding, groups):
    S, C_in, T = x.shape
    C_out, cig, K = w.shape
    T_out = out_length(T, K, stride, padding)
    cols = im2col(x, K, stride, padding, groups)
    wm = w.reshape(groups, C_out // groups, cig * K)
    # one GEMM per stream so identical streams give bitwise identical rows
    cols = np.ascontiguousarray(cols.reshape(groups, cig * K, S, T_out).transpose(2, 0, 1, 3))
    y = np.matmul(wm[None], cols)  # (S, g, og, T_out)
    return y.reshape(S, C_out, T_out)


def conv1d_backward(x, w, gy, stride, padding, groups, need_x=True, need_w=True):
    S, C_in, T = x.shape
    C_out, cig, K = w.shape
    T_out = gy.shape[2]
    og = C_out // groups
    gym = np.ascontiguousarray(gy.transpose(1, 0, 2)).reshape(groups, og, S * T_out)
    gx = gw = None
    if need_w:
        cols = im2col(x, K, stride, padding, groups)
        gw = np.matmul(gym, cols.transpose(0, 2, 1)).reshape(w.shape)
    if need_x:
        wm = w.reshape(groups, og, cig * K)
        gcols = np.matmul(wm.transpose(0, 2, 1), gym)
        gx = col2im(gcols, S, C_in, T, K, stride, padding, groups)
    return gx, gw
