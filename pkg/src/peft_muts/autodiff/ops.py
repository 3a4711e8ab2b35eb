"""Differentiable primitives.

Each op computes its forward value with NumPy and registers a closure that
maps the output gradient to one gradient per input.  Binary elementwise ops
broadcast like NumPy and reduce gradients back to the input shapes.
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from ..errors import ContractError, DimensionError, NumericError
from .tensor import Tensor, as_tensor, make_node

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _pair(a, b):
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype)
    return a, b


# -- elementwise ----------------------------------------------------------

def add(a, b):
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return make_node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b):
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    return make_node(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b):
    a, b = _pair(a, b)
    ad, bd = a.data, b.data

    def backward(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return make_node(ad * bd, (a, b), backward)


def square(x):
    x = as_tensor(x)
    xd = x.data
    return make_node(xd * xd, (x,), lambda g: (2.0 * xd * g,))


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    # np.where keeps +0.0 for non-positive inputs
    return make_node(np.where(mask, x.data, 0.0).astype(x.dtype, copy=False), (x,),
                     lambda g: (np.where(mask, g, 0.0),))


def _stable_sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x):
    x = as_tensor(x)
    s = _stable_sigmoid(x.data)
    return make_node(s, (x,), lambda g: (g * s * (1.0 - s),))


def silu(x):
    x = as_tensor(x)
    xd = x.data
    s = _stable_sigmoid(xd)
    return make_node(xd * s, (x,), lambda g: (g * s * (1.0 + xd * (1.0 - s)),))


# -- shape ----------------------------------------------------------------

def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def swapaxes(x, a, b):
    x = as_tensor(x)
    return make_node(np.swapaxes(x.data, a, b), (x,), lambda g: (np.swapaxes(g, a, b),))


def _is_basic(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)


def index(x, idx):
    x = as_tensor(x)
    shape, dtype = x.shape, x.dtype
    basic = _is_basic(idx)

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return make_node(x.data[idx], (x,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        sl = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl[axis] = slice(lo, hi)
            out.append(g[tuple(sl)])
        return tuple(out)

    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def broadcast_to(x, shape):
    x = as_tensor(x)
    old = x.shape
    return make_node(np.broadcast_to(x.data, shape).copy(), (x,), lambda g: (_unbroadcast(g, old),))


# -- reductions -----------------------------------------------------------

def sum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_node(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), backward)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    if axis is None:
        n = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([x.shape[a] for a in axes]))
    if n == 0:
        raise DimensionError(f"mean over an empty axis of shape {x.shape}")
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def mean_pool_vars(v, axis=0):
    """Average over the variable axis, keeping it with length one."""
    v = as_tensor(v)
    if v.ndim == 0 or v.shape[axis] < 1:
        raise DimensionError(f"cannot pool variables of shape {v.shape} along axis {axis}")
    return mean(v, axis=axis, keepdims=True)


def global_avg_pool_time(z):
    """Mean over the trailing (time) axis: ``(..., C, T) -> (..., C)``."""
    z = as_tensor(z)
    if z.ndim == 0 or z.shape[-1] == 0:
        raise DimensionError(f"cannot pool over an empty time axis, shape {z.shape}")
    return mean(z, axis=-1)


# -- linear algebra -------------------------------------------------------

def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim == 0 or b.ndim == 0:
        raise DimensionError(f"matmul needs at least 1-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[0 if b.ndim == 1 else -2]:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    vec_b = bd.ndim == 1
    vec_a = ad.ndim == 1
    A = ad[None, :] if vec_a else ad
    Bm = bd[:, None] if vec_b else bd

    def backward(g):
        G = g
        if vec_b:
            G = G[..., None]
        if vec_a:
            G = np.expand_dims(G, -2)
        ga = gb = None
        if a.requires_grad:
            ga = np.matmul(G, np.swapaxes(Bm, -1, -2))
            ga = _unbroadcast(ga, A.shape).reshape(ad.shape)
        if b.requires_grad:
            gb = np.matmul(np.swapaxes(A, -1, -2), G)
            gb = _unbroadcast(gb, Bm.shape).reshape(bd.shape)
        return ga, gb

    out = np.matmul(A, Bm)
    if vec_b:
        out = out[..., 0]
    if vec_a:
        out = out[..., 0, :] if not vec_b else out[..., 0]
    return make_node(out, (a, b), backward)


def channel_matmul(z, m):
    """Apply ``m`` (``C_in x C_out``) along the channel axis of ``(S, C_in, T)``.

    Returns ``(S, C_out, T)``; every time position is mapped independently.
    """
    z, m = _pair(z, m)
    if z.ndim != 3:
        raise DimensionError(f"channel_matmul expects (S, C, T), got {z.shape}")
    return swapaxes(matmul(swapaxes(z, 1, 2), m), 1, 2)


def linear(x, weight, bias=None):
    out = matmul(x, weight)
    if bias is not None:
        out = add(out, bias)
    return out


# -- convolution / normalisation -----------------------------------------

def conv1d(x, w, stride=1, padding=0, groups=1):
    """1-D cross-correlation. ``x``: ``(S, C_in, T)`` or ``(C_in, T)``."""
    x, w = _pair(x, w)
    squeeze = x.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 3 or w.ndim != 3:
        raise DimensionError(f"conv1d expects x (S, C_in, T) and w (C_out, C_in/groups, K); got {x.shape}, {w.shape}")
    S, C_in, T = x.shape
    C_out, cig, K = w.shape
    if groups < 1 or C_in % groups or C_out % groups:
        raise DimensionError(f"groups={groups} must divide C_in={C_in} and C_out={C_out}")
    if cig * groups != C_in:
        raise DimensionError(f"weight {w.shape} expects {cig * groups} input channels, input has {C_in}")
    if stride < 1 or padding < 0:
        raise DimensionError(f"invalid stride={stride} / padding={padding}")
    if T + 2 * padding < K:
        raise DimensionError(f"kernel {K} longer than padded input {T} + 2*{padding}")
    xd, wd = x.data, w.data

    def backward(g):
        gx, gw = kernels.conv1d_backward(xd, wd, g, stride, padding, groups,
                                         need_x=x.requires_grad, need_w=w.requires_grad)
        return gx, gw

    out = make_node(kernels.conv1d_forward(xd, wd, stride, padding, groups), (x, w), backward)
    if squeeze:
        out = reshape(out, out.shape[1:])
    return out


def batchnorm1d(x, gamma, beta, running_mean=None, running_var=None, training=True,
                momentum=BN_MOMENTUM, eps=BN_EPS):
    """Per-channel batch norm over ``(B, C, T)``.

    In training mode the running buffers (plain arrays) are updated in place
    with the unbiased batch variance.
    """
    x = as_tensor(x)
    gamma, beta = as_tensor(gamma, x.dtype), as_tensor(beta, x.dtype)
    if x.ndim != 3:
        raise DimensionError(f"batchnorm1d expects (B, C, T), got {x.shape}")
    B, C, T = x.shape
    if gamma.shape != (C,) or beta.shape != (C,):
        raise DimensionError(f"batchnorm1d affine params {gamma.shape}/{beta.shape} do not match C={C}")
    xd = x.data
    gd = gamma.data[None, :, None]
    if training:
        m = B * T
        if m == 1:
            raise NumericError(f"batch statistics undefined for one value per channel (input {x.shape})")
        mu = xd.mean(axis=(0, 2))
        var = xd.var(axis=(0, 2))
        if running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
        if running_var is not None:
            running_var *= 1.0 - momentum
            running_var += momentum * var * m / (m - 1)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (xd - mu[None, :, None]) * inv[None, :, None]

        def backward(g):
            gg = (g * xhat).sum(axis=(0, 2)) if gamma.requires_grad else None
            gb = g.sum(axis=(0, 2)) if beta.requires_grad else None
            gx = None
            if x.requires_grad:
                gxhat = g * gd
                gx = (inv[None, :, None] / m) * (
                    m * gxhat
                    - gxhat.sum(axis=(0, 2), keepdims=True)
                    - xhat * (gxhat * xhat).sum(axis=(0, 2), keepdims=True)
                )
            return gx, gg, gb
    else:
        if running_mean is None or running_var is None:
            raise ContractError("eval-mode batchnorm needs running statistics")
        inv = 1.0 / np.sqrt(running_var + eps)
        xhat = (xd - running_mean[None, :, None]) * inv[None, :, None]

        def backward(g):
            gg = (g * xhat).sum(axis=(0, 2)) if gamma.requires_grad else None
            gb = g.sum(axis=(0, 2)) if beta.requires_grad else None
            gx = g * (gd * inv[None, :, None]) if x.requires_grad else None
            return gx, gg, gb

    out = xhat * gd + beta.data[None, :, None]
    return make_node(out.astype(x.dtype, copy=False), (x, gamma, beta), backward)


# -- losses ---------------------------------------------------------------

def mse_loss(pred, target):
    """``(1 / 2B) * ||target - pred||^2``."""
    pred = as_tensor(pred)
    target = as_tensor(target, pred.dtype)
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} and target {target.shape} differ")
    n = pred.shape[0] if pred.ndim else 1
    if pred.size == 0 or n == 0:
        raise ContractError("empty batch")
    r = pred.data - target.data
    val = np.asarray(0.5 * np.sum(r * r) / n, dtype=pred.dtype)

    def backward(g):
        gp = g * r / n
        return gp, (-gp if target.requires_grad else None)

    return make_node(val, (pred, target), backward)


__all__ = [
    "add", "sub", "mul", "square", "relu", "sigmoid", "silu", "reshape", "swapaxes",
    "index", "concat", "broadcast_to", "sum", "mean", "mean_pool_vars",
    "global_avg_pool_time", "matmul", "channel_matmul", "linear", "conv1d",
    "batchnorm1d", "mse_loss",
]
