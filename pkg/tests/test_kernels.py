import numpy as np
import pytest

from peft_muts import kernels
from peft_muts.kernels import _numpy_kernels

from conftest import naive_conv1d

BACKENDS = kernels.available_backends()

CASES = [
    # S, C_in, C_out, T, K, stride, padding, groups
    (2, 3, 4, 9, 3, 1, 1, 1),
    (1, 4, 8, 16, 3, 2, 1, 4),
    (3, 6, 6, 11, 3, 2, 1, 6),
    (2, 2, 5, 7, 7, 2, 3, 1),
    (1, 5, 3, 5, 1, 1, 0, 1),
    (2, 4, 4, 10, 3, 2, 0, 2),
]


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("case", CASES)
def test_forward_matches_naive(backend, case, rng):
    S, C_in, C_out, T, K, stride, padding, groups = case
    impl = kernels.get_backend(backend)
    x = rng.standard_normal((S, C_in, T))
    w = rng.standard_normal((C_out, C_in // groups, K))
    np.testing.assert_allclose(impl.conv1d_forward(x, w, stride, padding, groups),
                               naive_conv1d(x, w, stride, padding, groups), rtol=0, atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("case", CASES)
def test_backward_is_adjoint_of_forward(backend, case, rng):
    # <conv(x, w), gy> is bilinear, so its gradients are exactly the backward outputs.
    S, C_in, C_out, T, K, stride, padding, groups = case
    impl = kernels.get_backend(backend)
    x = rng.standard_normal((S, C_in, T))
    w = rng.standard_normal((C_out, C_in // groups, K))
    T_out = (T + 2 * padding - K) // stride + 1
    gy = rng.standard_normal((S, C_out, T_out))
    gx, gw = impl.conv1d_backward(x, w, gy, stride, padding, groups)
    ex = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = 1.0
        ex[idx] = np.sum(naive_conv1d(e, w, stride, padding, groups) * gy)
    ew = np.zeros_like(w)
    for idx in np.ndindex(w.shape):
        e = np.zeros_like(w)
        e[idx] = 1.0
        ew[idx] = np.sum(naive_conv1d(x, e, stride, padding, groups) * gy)
    np.testing.assert_allclose(gx, ex, atol=1e-12)
    np.testing.assert_allclose(gw, ew, atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_partial_backward_skips_unneeded(backend, rng):
    impl = kernels.get_backend(backend)
    x = rng.standard_normal((2, 4, 8))
    w = rng.standard_normal((4, 4, 3))
    gy = rng.standard_normal((2, 4, 8))
    gx, gw = impl.conv1d_backward(x, w, gy, 1, 1, 1, need_x=True, need_w=False)
    assert gw is None and gx.shape == x.shape


def test_backends_agree(rng):
    if len(BACKENDS) < 2:
        pytest.skip("compiled backend not built")
    c, p = kernels.get_backend("cython"), kernels.get_backend("python")
    for S, C_in, C_out, T, K, stride, padding, groups in CASES:
        x = rng.standard_normal((S, C_in, T))
        w = rng.standard_normal((C_out, C_in // groups, K))
        np.testing.assert_allclose(c.conv1d_forward(x, w, stride, padding, groups),
                                   p.conv1d_forward(x, w, stride, padding, groups), atol=1e-12)


def test_float32_supported(rng):
    for backend in BACKENDS:
        impl = kernels.get_backend(backend)
        x = rng.standard_normal((2, 3, 8)).astype(np.float32)
        w = rng.standard_normal((3, 1, 3)).astype(np.float32)
        y = impl.conv1d_forward(x, w, 1, 1, 3)
        assert y.dtype == np.float32


def test_out_length():
    assert _numpy_kernels.out_length(1024, 7, 2, 3) == 512
    assert _numpy_kernels.out_length(15, 3, 2, 1) == 8
