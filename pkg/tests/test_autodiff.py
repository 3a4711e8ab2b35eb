import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from peft_muts.autodiff import (
    GradTape, Tensor, batchnorm1d, conv1d, global_avg_pool_time, grad_check, matmul,
    mean_pool_vars, mse_loss, no_grad, ops, sigmoid, silu,
)
from peft_muts.errors import ContractError, DimensionError, NumericError

from conftest import naive_conv1d


def T(a, grad=False):
    return Tensor(np.array(a, dtype=np.float64), requires_grad=grad)


# -- matmul ---------------------------------------------------------------

def test_matmul_identity():
    a = T([[1, 2], [3, 4]])
    np.testing.assert_array_equal(matmul(a, T(np.eye(2))).data, [[1, 2], [3, 4]])


def test_matmul_triple_loop(rng):
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    expect = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            for k in range(4):
                expect[i, j] += a[i, k] * b[k, j]
    np.testing.assert_allclose(matmul(T(a), T(b)).data, expect, rtol=0, atol=1e-12)


def test_matmul_grad_fd(rng):
    a, b = T(rng.standard_normal((3, 4))), T(rng.standard_normal((4, 2)))
    assert grad_check(lambda x: matmul(x, b).sum(), a) < 1e-6
    assert grad_check(lambda y: matmul(a, y).sum(), b) < 1e-6


def test_matmul_shape_error_names_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(T(np.ones((2, 3))), T(np.ones((2, 3))))


def test_matmul_vector_and_batched(rng):
    a = T(rng.standard_normal((5, 3, 4)))
    v = T(rng.standard_normal(4))
    np.testing.assert_allclose(matmul(a, v).data, a.data @ v.data)
    m = T(rng.standard_normal((4, 2)))
    assert grad_check(lambda x, y: matmul(x, y).sum(), [a, m]) < 1e-6
    assert grad_check(lambda x, y: ops.square(matmul(x, y)).sum(), [a, v]) < 1e-6


# -- conv1d ---------------------------------------------------------------

def test_conv1d_identity_kernels(rng):
    x = rng.standard_normal((3, 10))
    np.testing.assert_array_equal(conv1d(T(x[:1]), T([[[1.0]]])).data, x[:1])
    y = conv1d(T(x[:1]), T([[[0.0, 1.0, 0.0]]]), stride=1, padding=1)
    np.testing.assert_array_equal(y.data, x[:1])


@pytest.mark.parametrize("case", [
    (2, 3, 4, 9, 3, 1, 1, 1),
    (1, 4, 8, 16, 3, 2, 1, 4),
    (2, 5, 5, 8, 3, 2, 1, 5),
])
def test_conv1d_oracle_and_grad(case, rng):
    S, C_in, C_out, L, K, stride, padding, groups = case
    x = T(rng.standard_normal((S, C_in, L)))
    w = T(rng.standard_normal((C_out, C_in // groups, K)))
    np.testing.assert_allclose(conv1d(x, w, stride, padding, groups).data,
                               naive_conv1d(x.data, w.data, stride, padding, groups), atol=1e-12)
    proj = rng.standard_normal(conv1d(x, w, stride, padding, groups).shape)
    err = grad_check(lambda a, b: (conv1d(a, b, stride, padding, groups) * proj).sum(), [x, w])
    assert err < 1e-5


def test_conv1d_errors():
    with pytest.raises(DimensionError):
        conv1d(T(np.ones((1, 3, 5))), T(np.ones((4, 1, 3))), groups=2)
    with pytest.raises(DimensionError):
        conv1d(T(np.ones((1, 1, 2))), T(np.ones((1, 1, 5))))


def test_conv1d_50_random_cases_against_naive():
    r = np.random.default_rng(50)
    for i in range(50):
        C_in = int(r.integers(1, 5))
        depthwise = i % 3 == 0
        groups = C_in if depthwise else 1
        C_out = C_in * int(r.integers(1, 3)) if depthwise else int(r.integers(1, 5))
        K = int(r.choice([1, 3, 5]))
        stride = 2 if i % 2 else 1
        padding = int(r.integers(0, K // 2 + 1))
        L = int(r.integers(K, 14))
        x = r.standard_normal((int(r.integers(1, 3)), C_in, L))
        w = r.standard_normal((C_out, C_in // groups, K))
        np.testing.assert_allclose(conv1d(T(x), T(w), stride, padding, groups).data,
                                   naive_conv1d(x, w, stride, padding, groups), atol=1e-12)


# -- batchnorm ------------------------------------------------------------

def test_batchnorm_constant_input_gives_zeros():
    x = T(np.full((4, 3, 5), 2.5))
    out = batchnorm1d(x, np.ones(3), np.zeros(3), training=True)
    np.testing.assert_allclose(out.data, 0.0, atol=1e-12)


def test_batchnorm_statistics(rng):
    x = T(rng.standard_normal((8, 4, 16)) * 3 + 1)
    out = batchnorm1d(x, np.ones(4), np.zeros(4), training=True).data
    assert np.all(np.abs(out.mean(axis=(0, 2))) < 1e-6)
    assert np.all(np.abs(out.var(axis=(0, 2)) - 1.0) < 1e-4)


def test_batchnorm_zero_gamma(rng):
    beta = np.array([0.5, -1.0])
    out = batchnorm1d(T(rng.standard_normal((3, 2, 4))), np.zeros(2), beta, training=True)
    np.testing.assert_array_equal(out.data, np.broadcast_to(beta[None, :, None], (3, 2, 4)))


def test_batchnorm_running_stats_and_eval(rng):
    x = rng.standard_normal((4, 2, 6)) * 2 + 3
    rm, rv = np.zeros(2), np.ones(2)
    batchnorm1d(T(x), np.ones(2), np.zeros(2), rm, rv, training=True)
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2)))
    np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2), ddof=1))
    out = batchnorm1d(T(x), np.ones(2), np.zeros(2), rm, rv, training=False).data
    np.testing.assert_allclose(out, (x - rm[None, :, None]) / np.sqrt(rv[None, :, None] + 1e-5))


def test_batchnorm_degenerate():
    with pytest.raises(NumericError):
        batchnorm1d(T(np.ones((1, 2, 1))), np.ones(2), np.zeros(2), training=True)


@pytest.mark.parametrize("training", [True, False])
def test_batchnorm_grad(training, rng):
    x = T(rng.standard_normal((3, 2, 5)))
    g = T(rng.standard_normal(2) + 1.5)
    b = T(rng.standard_normal(2))
    proj = rng.standard_normal((3, 2, 5))
    rm, rv = rng.standard_normal(2), rng.random(2) + 0.5

    def f(a, gg, bb):
        return (batchnorm1d(a, gg, bb, rm.copy(), rv.copy(), training=training) * proj).sum()

    assert grad_check(f, [x, g, b]) < 1e-4


# -- activations ----------------------------------------------------------

def test_silu_values():
    assert silu(T(0.0)).item() == 0.0
    assert silu(T(1.0)).item() == pytest.approx(1.0 / (1.0 + math.exp(-1.0)), abs=1e-15)
    assert abs(silu(T(-20.0)).item()) < 1e-7


def test_sigmoid_values():
    assert sigmoid(T(0.0)).item() == 0.5
    with np.errstate(over="raise"):
        assert sigmoid(T(40.0)).item() == pytest.approx(1.0)
        assert sigmoid(T(-40.0)).item() == pytest.approx(0.0, abs=1e-15)
        assert sigmoid(T(-1000.0)).item() == 0.0


def test_activation_grads(rng):
    x = T(rng.standard_normal(20) * 3)
    assert grad_check(lambda a: sigmoid(a).sum(), x) < 1e-6
    assert grad_check(lambda a: silu(a).sum(), x) < 1e-6


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-60, 60)))
def test_silu_is_x_times_sigmoid(x):
    np.testing.assert_array_equal(silu(T(x)).data, (T(x) * sigmoid(T(x))).data)


# -- pooling and loss -----------------------------------------------------

def test_mean_pool_vars(rng):
    one = rng.standard_normal((1, 3, 4))
    np.testing.assert_array_equal(mean_pool_vars(T(one)).data, one)
    np.testing.assert_array_equal(mean_pool_vars(T([[1.0, 1.0], [3.0, 3.0]])).data, [[2.0, 2.0]])
    v = rng.standard_normal((5, 4, 7))
    expect = np.zeros((1, 4, 7))
    for i in range(5):
        expect[0] += v[i]
    expect /= 5
    np.testing.assert_allclose(mean_pool_vars(T(v)).data, expect, atol=1e-12)
    with pytest.raises(DimensionError):
        mean_pool_vars(T(np.zeros((0, 2))))


def test_global_avg_pool_time(rng):
    np.testing.assert_array_equal(global_avg_pool_time(T(np.full((3, 6), 2.0))).data, [2.0] * 3)
    z = rng.standard_normal((4, 1))
    np.testing.assert_array_equal(global_avg_pool_time(T(z)).data, z[:, 0])
    z = rng.standard_normal((4, 9))
    expect = [sum(z[c, t] for t in range(9)) / 9 for c in range(4)]
    np.testing.assert_allclose(global_avg_pool_time(T(z)).data, expect, atol=1e-12)
    with pytest.raises(DimensionError):
        global_avg_pool_time(T(np.zeros((3, 0))))


def test_mse_loss(rng):
    assert mse_loss(T([1.0, 2.0]), T([1.0, 2.0])).item() == 0.0
    assert mse_loss(T([1.0, 1.0]), T([0.0, 0.0])).item() == 0.5
    p = T(rng.standard_normal(6))
    y = T(rng.standard_normal(6))
    assert grad_check(lambda a: mse_loss(a, y), p) < 1e-8
    p.grad = None
    mse_loss(p, y).backward()
    np.testing.assert_allclose(p.grad, (p.data - y.data) / 6)
    with pytest.raises(ContractError):
        mse_loss(T(np.zeros(0)), T(np.zeros(0)))


# -- grad_check harness ---------------------------------------------------

def test_grad_check_linear_is_exact(rng):
    assert grad_check(lambda a: a.sum(), T(rng.standard_normal(10))) < 1e-9


def test_grad_check_conv_silu_mse_chain(rng):
    w = T(rng.standard_normal((2, 3, 3)))
    x = T(rng.standard_normal((2, 3, 8)))
    y = rng.standard_normal(2)

    def f(ww):
        h = silu(conv1d(x, ww, 1, 1))
        return mse_loss(global_avg_pool_time(h).sum(axis=1), y)

    assert grad_check(f, w) < 1e-4


def test_grad_check_zero_gradient_guard():
    x = T(np.ones(4))
    assert grad_check(lambda a: (a * 0.0).sum() + 3.0, x) < 1e-8


def test_grad_check_non_finite():
    with pytest.raises(NumericError):
        grad_check(lambda a: (a * np.inf).sum(), T(np.ones(2)))


# -- tape -----------------------------------------------------------------

def test_tape_order_is_execution_order(rng):
    a = T(rng.standard_normal(3), grad=True)
    b = a * 2.0
    c = silu(b)
    d = b + c
    e = d.sum()
    tape = GradTape(e)
    assert [n._seq for n in tape.nodes] == sorted(n._seq for n in tape.nodes)
    assert tape.nodes[0] is a and tape.nodes[-1] is e
    assert len(tape) == 5


def test_no_grad_records_nothing(rng):
    a = T(rng.standard_normal(3), grad=True)
    with no_grad():
        b = silu(a)
    assert not b.requires_grad


def test_gradient_accumulates_over_shared_use(rng):
    a = T(rng.standard_normal(4), grad=True)
    (a * a + a).sum().backward()
    np.testing.assert_allclose(a.grad, 2 * a.data + 1)


def test_forward_bitwise_deterministic():
    def run():
        r = np.random.default_rng(7)
        x = T(r.standard_normal((2, 3, 12)))
        w = T(r.standard_normal((4, 3, 3)))
        return silu(batchnorm1d(conv1d(x, w, 2, 1), np.ones(4), np.zeros(4), training=True)).data

    assert run().tobytes() == run().tobytes()
