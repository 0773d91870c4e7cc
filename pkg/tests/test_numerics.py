import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import dogpain.numerics as nx
from dogpain.errors import ConfigurationError, ContractError, DimensionError, NonFiniteError
from dogpain.numerics import BatchNormState, Tensor, grad_check

pytestmark = pytest.mark.usefixtures("f64")


def brute_conv(x, k):
    """Loop-based 'same' cross-correlation, independent of the im2col path."""
    c_out, c_in, kk, _ = k.shape
    _, h, w = x.shape
    p = kk // 2
    out = np.zeros((c_out, h, w))
    for o in range(c_out):
        for i in range(h):
            for j in range(w):
                s = 0.0
                for c in range(c_in):
                    for a in range(kk):
                        for b in range(kk):
                            ii, jj = i + a - p, j + b - p
                            if 0 <= ii < h and 0 <= jj < w:
                                s += x[c, ii, jj] * k[o, c, a, b]
                out[o, i, j] = s
    return out


# ------------------------------------------------------------------ matmul

def test_matmul_identity():
    out = nx.matmul(Tensor(np.eye(2)), Tensor([[3.0], [4.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [4.0]])


def test_matmul_zero():
    out = nx.matmul(Tensor([[1.0, 2.0]]), Tensor([[0.0], [0.0]]))
    np.testing.assert_array_equal(out.data, [[0.0]])


def test_matmul_gradient(rng):
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    err = grad_check(lambda x, y: nx.tsum(nx.matmul(x, y)), [a, b], 1e-5)
    assert err < 1e-6


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        nx.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


def test_batched_matmul_gradient(rng):
    a, b = rng.normal(size=(2, 1, 5)), rng.normal(size=(2, 5, 3))
    w = rng.normal(size=(2, 1, 3))
    assert grad_check(lambda x, y: nx.tsum(nx.matmul(x, y) * Tensor(w)), [a, b]) < 1e-6


# ------------------------------------------------------------------ conv2d

def test_conv_zero_kernels(rng):
    out = nx.conv2d(Tensor(rng.normal(size=(2, 5, 5))), Tensor(np.zeros((3, 2, 3, 3))))
    assert out.shape == (3, 5, 5)
    assert not out.data.any()


def test_conv_identity_kernel_is_bitwise_identity(rng):
    x = rng.normal(size=(1, 6, 7))
    out = nx.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))))
    assert np.array_equal(out.data, x)


def test_conv_ones_hand_summed():
    out = nx.conv2d(Tensor(np.ones((1, 3, 3))), Tensor(np.ones((1, 1, 3, 3)))).data[0]
    np.testing.assert_array_equal(out, [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


def test_conv_even_kernel_rejected():
    with pytest.raises(ConfigurationError):
        nx.conv2d(Tensor(np.ones((1, 4, 4))), Tensor(np.ones((1, 1, 2, 2))))


def test_conv_matches_brute_force(rng):
    x, k = rng.normal(size=(3, 5, 6)), rng.normal(size=(2, 3, 3, 3))
    np.testing.assert_allclose(nx.conv2d(Tensor(x), Tensor(k)).data, brute_conv(x, k), atol=1e-12)
    k5 = rng.normal(size=(1, 3, 5, 5))
    np.testing.assert_allclose(nx.conv2d(Tensor(x), Tensor(k5)).data, brute_conv(x, k5), atol=1e-12)


def test_conv_batched_matches_unbatched(rng):
    x, k = rng.normal(size=(2, 3, 4, 4)), rng.normal(size=(2, 3, 3, 3))
    out = nx.conv2d(Tensor(x), Tensor(k)).data
    for n in range(2):
        np.testing.assert_allclose(out[n], brute_conv(x[n], k), atol=1e-12)


def test_conv_gradient(rng):
    x, k = rng.normal(size=(2, 4, 4)), rng.normal(size=(3, 2, 3, 3))
    w = rng.normal(size=(3, 4, 4))
    assert grad_check(lambda a, b: nx.tsum(nx.conv2d(a, b) * Tensor(w)), [x, k]) < 1e-6


# ------------------------------------------------------------- elementwise

def test_sigmoid_tanh_at_zero():
    assert nx.elementwise("sigmoid", Tensor([0.0])).data[0] == 0.5
    assert nx.elementwise("tanh", Tensor([0.0])).data[0] == 0.0


def test_relu_values():
    np.testing.assert_array_equal(nx.elementwise("relu", Tensor([-1.0, 0.0, 2.0])).data, [0, 0, 2])


def test_hadamard_gradient(rng):
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    assert grad_check(lambda x, y: nx.tsum(nx.elementwise("hadamard", x, y)), [a, b]) < 1e-6


@pytest.mark.parametrize("op", ["sigmoid", "tanh"])
def test_unary_gradients(op, rng):
    w = Tensor(rng.normal(size=(3, 4)))
    assert grad_check(lambda x: nx.tsum(nx.elementwise(op, x) * w), rng.normal(size=(3, 4))) < 1e-6


def test_relu_gradient_away_from_kink(rng):
    x = rng.normal(size=(3, 4))
    x[np.abs(x) < 0.1] = 0.5
    assert grad_check(lambda t: nx.tsum(nx.relu(t) * t), x) < 1e-6


def test_elementwise_shape_mismatch():
    with pytest.raises(DimensionError):
        nx.elementwise("add", Tensor(np.ones(3)), Tensor(np.ones(4)))


def test_non_finite_is_hard_error():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])
    with pytest.raises(NonFiniteError):
        nx.log(Tensor([0.0]))


# ----------------------------------------------------------------- softmax

def test_softmax_uniform():
    np.testing.assert_allclose(nx.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, rtol=0, atol=1e-15)


def test_softmax_stability():
    out = nx.softmax(Tensor([1000.0, 0.0])).data
    assert out[0] == pytest.approx(1.0) and out[1] == pytest.approx(0.0, abs=1e-300)


def test_softmax_closed_form():
    out = nx.softmax(Tensor([math.log(2.0), 0.0])).data
    np.testing.assert_allclose(out, [2 / 3, 1 / 3], atol=1e-15)


def test_softmax_empty():
    with pytest.raises(DimensionError):
        nx.softmax(Tensor(np.zeros(0)))


def test_softmax_gradient(rng):
    w = Tensor(rng.normal(size=5))
    assert grad_check(lambda v: nx.tsum(nx.softmax(v) * w), rng.normal(size=5)) < 1e-6


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(1, 1000), elements=st.floats(-1e4, 1e4)))
def test_softmax_sums_to_one(v):
    with nx.precision("float64"):
        out = nx.softmax(Tensor(v)).data
    assert (out >= 0).all()
    assert abs(out.sum() - 1.0) < 1e-9


# ----------------------------------------------------------------- maxpool

def test_maxpool_basic():
    np.testing.assert_array_equal(nx.maxpool2d(Tensor([[[1.0, 2.0], [3.0, 4.0]]])).data, [[[4.0]]])


def test_maxpool_constant_and_ceil():
    out = nx.maxpool2d(Tensor(np.full((2, 5, 3), 7.0)))
    assert out.shape == (2, 3, 2)
    assert (out.data == 7.0).all()


def test_maxpool_tie_goes_to_first_index():
    x = Tensor(np.full((1, 2, 2), 5.0), requires_grad=True)
    nx.maxpool2d(x).backward()
    np.testing.assert_array_equal(x.grad, [[[1.0, 0.0], [0.0, 0.0]]])
    # finite differences on a copy nudged toward index (0,0) reproduce the tie-break adjoint
    nudged = np.full((1, 2, 2), 5.0)
    nudged[0, 0, 0] += 1e-3
    for idx in np.ndindex(1, 2, 2):
        hi, lo = nudged.copy(), nudged.copy()
        hi[idx] += 1e-5
        lo[idx] -= 1e-5
        slope = (nx.maxpool2d(Tensor(hi)).data - nx.maxpool2d(Tensor(lo)).data).item() / 2e-5
        assert slope == pytest.approx(x.grad[idx], abs=1e-9)


def test_maxpool_gradient(rng):
    x = rng.permutation(60).reshape(3, 4, 5).astype(float)
    w = Tensor(rng.normal(size=(3, 2, 3)))
    assert grad_check(lambda t: nx.tsum(nx.maxpool2d(t) * w), x) < 1e-6


# --------------------------------------------------------------- batchnorm

def test_batchnorm_zero_variance_gives_beta():
    st_ = BatchNormState(2)
    out = nx.batchnorm(Tensor(np.full((4, 2, 3, 3), 3.0)), Tensor([2.0, 5.0]), Tensor([0.5, -1.0]), st_)
    np.testing.assert_allclose(out.data[:, 0], 0.5)
    np.testing.assert_allclose(out.data[:, 1], -1.0)


def test_batchnorm_standardized_passthrough(rng):
    x = rng.normal(size=(64, 3, 4, 4))
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    out = nx.batchnorm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), BatchNormState(3))
    np.testing.assert_allclose(out.data, x, atol=1e-4)


def test_batchnorm_gradient(rng):
    x = rng.normal(size=(2, 3, 4, 4))
    g, b = rng.normal(size=3), rng.normal(size=3)
    w = Tensor(rng.normal(size=(2, 3, 4, 4)))
    fn = lambda a, gg, bb: nx.tsum(nx.batchnorm(a, gg, bb, BatchNormState(3)) * w)  # noqa: E731
    assert grad_check(fn, [x, g, b]) < 1e-4


def test_batchnorm_running_stats_and_infer(f64, rng):
    s = BatchNormState(2)
    xs = [rng.normal(loc=3.0 + k, size=(10, 2, 2, 2)) for k in range(14)]
    mean_ref = np.zeros(2)
    var_ref = np.ones(2)
    for n, x in enumerate(xs, start=1):
        nx.batchnorm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), s)
        keep = min(0.9, 1 - 1 / n)  # running average first, then momentum 0.9
        mean_ref = keep * mean_ref + (1 - keep) * x.mean(axis=(0, 2, 3))
        var_ref = keep * var_ref + (1 - keep) * x.var(axis=(0, 2, 3), ddof=1)
        if n == 1:
            np.testing.assert_allclose(s.running_mean, x.mean(axis=(0, 2, 3)), rtol=1e-14)
    np.testing.assert_allclose(s.running_mean, mean_ref, rtol=1e-12)
    np.testing.assert_allclose(s.running_var, var_ref, rtol=1e-12)
    x = xs[-1]
    out = nx.batchnorm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), s, mode="infer")
    expect = (x - s.running_mean.reshape(1, 2, 1, 1)) / np.sqrt(s.running_var.reshape(1, 2, 1, 1) + 1e-5)
    np.testing.assert_allclose(out.data, expect)


def test_batchnorm_empty_batch():
    with pytest.raises(ConfigurationError):
        nx.batchnorm(Tensor(np.zeros((0, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)), BatchNormState(2))


# -------------------------------------------------------------- grad_check

def test_grad_check_linear_is_exact(rng):
    # dyadic step and integer point keep every difference exactly representable
    assert grad_check(nx.tsum, rng.integers(-9, 9, size=(4, 3)).astype(float), 2.0**-17) == 0.0
    assert grad_check(nx.tsum, rng.normal(size=(4, 3))) < 1e-9


def test_grad_check_sum_of_squares():
    x = Tensor([1.0, 2.0], requires_grad=True)
    nx.tsum(x * x).backward()
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])
    assert grad_check(lambda t: nx.tsum(t * t), np.array([1.0, 2.0])) < 1e-9


def test_grad_check_rejects_non_scalar():
    with pytest.raises(ContractError):
        grad_check(lambda t: t * 2.0, np.ones(3))


def test_grad_check_requires_float64():
    with nx.precision("float32"):
        with pytest.raises(ContractError):
            grad_check(nx.tsum, np.ones(2))


# ------------------------------------------------------------ tape rules

def test_adjoint_linearity(rng):
    x0 = rng.normal(size=(3, 3))
    w1, w2 = Tensor(rng.normal(size=(3, 3))), Tensor(rng.normal(size=(3, 3)))
    f1 = lambda x: nx.tsum(nx.tanh(x) * w1)  # noqa: E731
    f2 = lambda x: nx.tsum(nx.sigmoid(nx.matmul(x, x)) * w2)  # noqa: E731
    grads = []
    for fn in (f1, f2, lambda x: f1(x) + f2(x)):
        x = Tensor(x0, requires_grad=True)
        fn(x).backward()
        grads.append(x.grad)
    np.testing.assert_allclose(grads[2], grads[0] + grads[1], atol=1e-12, rtol=0)


def test_shared_node_visited_once():
    x = Tensor([3.0], requires_grad=True)
    y = x * x
    nx.tsum(y + y).backward()
    np.testing.assert_array_equal(x.grad, [12.0])


def test_deep_chain_no_recursion_limit():
    x = Tensor([0.5], requires_grad=True)
    y = x
    for _ in range(5000):
        y = y * 1.0
    nx.tsum(y).backward()
    assert x.grad[0] == 1.0


def test_structural_ops_gradients(rng):
    a, b = rng.normal(size=(2, 3)), rng.normal(size=(2, 2))
    w = Tensor(rng.normal(size=(5, 2)))

    def fn(x, y):
        cat = nx.concat([x, y], axis=1)
        st_ = nx.stack([cat[0], cat[1]], axis=1)
        return nx.tsum(nx.reshape(nx.transpose(st_, (0, 1)), (5, 2)) * w)

    assert grad_check(fn, [a, b]) < 1e-9


def test_precision_modes_do_not_mix():
    with nx.precision("float32"):
        t = Tensor([1.0, 2.0])
    assert t.data.dtype == np.float32
    assert Tensor([1.0]).data.dtype == np.float64
