"""Hot convolution kernels with a compiled backend and a NumPy fallback.

The compiled extension is used when it imports cleanly.  Set
``PMTS_KERNELS=python`` to force the fallback (benchmarks and the
cross-backend tests do this per call through :func:`get_backend`).
"""

import os

from . import _numpy_kernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_BACKENDS = {"python": _numpy_kernels}
if _ckernels is not None:
    _BACKENDS["cython"] = _ckernels


def available_backends():
    return sorted(_BACKENDS)


def get_backend(name):
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} not available; have {available_backends()}") from None


def _select():
    requested = os.environ.get("PMTS_KERNELS", "").strip().lower()
    if requested:
        return requested, get_backend(requested)
    if _ckernels is not None:
        return "cython", _ckernels
    return "python", _numpy_kernels


BACKEND, _impl = _select()


def set_backend(name):
    """Switch the process-wide backend; returns the previous name."""
    global BACKEND, _impl
    prev = BACKEND
    _impl = get_backend(name)
    BACKEND = name
    return prev


def conv1d_forward(x, w, stride, padding, groups):
    return _impl.conv1d_forward(x, w, stride, padding, groups)


def conv1d_backward(x, w, gy, stride, padding, groups, need_x=True, need_w=True):
    return _impl.conv1d_backward(x, w, gy, stride, padding, groups, need_x, need_w)


out_length = _numpy_kernels.out_length
