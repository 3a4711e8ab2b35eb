"""Central finite-difference gradient checking."""

import numpy as np

from ..errors import NumericError
from .tensor import Tensor


def numerical_grad(f, inputs, h=1e-5):
    """Central differences of scalar ``f(*inputs)`` w.r.t. every input entry."""
    grads = []
    for t in inputs:
        if not (isinstance(t.data, np.ndarray) and t.data.flags.c_contiguous):
            t.data = np.array(t.data)  # perturb in place below, so no scalars or views
        g = np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = _scalar(f(*inputs))
            flat[i] = orig - h
            fm = _scalar(f(*inputs))
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def _scalar(out):
    v = out.data if isinstance(out, Tensor) else np.asarray(out)
    if v.size != 1:
        raise ValueError(f"gradient check needs a scalar function, got shape {v.shape}")
    v = float(v.reshape(-1)[0])
    if not np.isfinite(v):
        raise NumericError("function returned a non-finite value during gradient check")
    return v


def grad_check(f, x, h=1e-5, zero_tol=1e-8):
    """Max relative error between tape gradients and central differences.

    ``x`` is a tensor or a list of tensors passed positionally to ``f``.
    Coordinates where both gradients are below ``zero_tol`` in magnitude are
    compared in absolute terms instead.
    """
    inputs = [x] if isinstance(x, Tensor) else list(x)
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ValueError("gradient checks require float64 tensors")
        t.requires_grad = True
        t.grad = None
    out = f(*inputs)
    _scalar(out)
    out.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]
    for a in analytic:
        if not np.all(np.isfinite(a)):
            raise NumericError("non-finite tape gradient")
    numeric = numerical_grad(f, inputs, h)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        diff = np.abs(a - n)
        scale = np.maximum(np.abs(a), np.abs(n))
        err = np.where(scale < zero_tol, diff, diff / np.where(scale < zero_tol, 1.0, scale))
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
