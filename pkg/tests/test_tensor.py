"""Op-level oracles and backward-sweep checks for the tensor engine."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrgan360 import tensor as T
from mrgan360.errors import ShapeError
from mrgan360.gradcheck import check_gradients, numeric_gradient
from mrgan360.tensor import Tensor


def t64(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad, dtype=np.float64)


# -- conv2d -------------------------------------------------------------------

def conv2d_loops(x, kernel, bias, dilation):
    """Five-nested-loop reference convolution, written independently."""
    c_in, h, w = x.shape
    c_out, _, k, _ = kernel.shape
    center = k // 2
    out = np.zeros((c_out, h, w))
    for c in range(c_out):
        for y in range(h):
            for xx in range(w):
                acc = bias[c] if bias is not None else 0.0
                for ci in range(c_in):
                    for i in range(k):
                        for j in range(k):
                            yy = y + (i - center) * dilation
                            xj = xx + (j - center) * dilation
                            if 0 <= yy < h and 0 <= xj < w:
                                acc += x[ci, yy, xj] * kernel[c, ci, i, j]
                out[c, y, xx] = acc
    return out


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(0)
    x = rng.uniform(size=(1, 5, 5))
    kernel = np.zeros((1, 1, 3, 3))
    kernel[0, 0, 1, 1] = 1.0
    out = T.conv2d(t64(x), t64(kernel))
    assert np.allclose(out.data, x)


def test_conv2d_shift_by_dilation():
    rng = np.random.default_rng(1)
    x = rng.uniform(size=(1, 5, 5))
    kernel = np.zeros((1, 1, 3, 3))
    kernel[0, 0, 0, 0] = 1.0
    out = T.conv2d(t64(x), t64(kernel), dilation=2).data[0]
    for y in range(5):
        for xx in range(5):
            expect = x[0, y - 2, xx - 2] if y >= 2 and xx >= 2 else 0.0
            assert abs(out[y, xx] - expect) < 1e-12


@pytest.mark.parametrize("dilation", [1, 2, 4])
def test_conv2d_matches_loop_oracle(dilation):
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 7, 7))
    kernel = rng.normal(size=(2, 1, 3, 3))
    bias = rng.normal(size=2)
    out = T.conv2d(t64(x), t64(kernel), t64(bias), dilation)
    assert np.abs(out.data - conv2d_loops(x, kernel, bias, dilation)).max() \
        <= 1e-6


def test_conv2d_shape_errors():
    with pytest.raises(ShapeError):
        T.conv2d(t64(np.zeros((2, 4, 4))), t64(np.zeros((1, 3, 3, 3))))
    with pytest.raises(ShapeError):
        T.conv2d(t64(np.zeros((1, 4, 4))), t64(np.zeros((1, 1, 3, 3))),
                 dilation=0)


def test_conv2d_gradients():
    rng = np.random.default_rng(3)
    x = t64(rng.normal(size=(2, 6, 6)), requires_grad=True)
    kernel = t64(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
    bias = t64(rng.normal(size=3), requires_grad=True)
    res = check_gradients(
        lambda: T.tsum(T.conv2d(x, kernel, bias, dilation=2) ** 2.0),
        {"x": x, "kernel": kernel, "bias": bias})
    assert max(res.values()) <= 1e-4


# -- max_pool2d ---------------------------------------------------------------

def test_max_pool_window():
    out = T.max_pool2d(t64([[[1.0, 2.0], [3.0, 4.0]]]))
    assert out.data.shape == (1, 1, 1)
    assert out.data[0, 0, 0] == 4.0


def test_max_pool_tie_break_single_cell():
    x = t64(np.full((1, 4, 4), 7.0), requires_grad=True)
    out = T.max_pool2d(x)
    assert np.all(out.data == 7.0)
    T.backward(T.tsum(out))
    windows = x.grad.reshape(1, 2, 2, 2, 2).transpose(0, 1, 3, 2, 4)
    assert np.all(windows.reshape(-1, 4).sum(axis=1) == 1.0)


def test_max_pool_matches_loop_oracle():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(3, 8, 8))
    out = T.max_pool2d(t64(x)).data
    for c in range(3):
        for y in range(4):
            for xx in range(4):
                assert out[c, y, xx] == \
                    x[c, 2 * y:2 * y + 2, 2 * xx:2 * xx + 2].max()


def test_max_pool_too_small():
    with pytest.raises(ShapeError):
        T.max_pool2d(t64(np.zeros((1, 1, 4))))


# -- fully_connected ----------------------------------------------------------

def test_fc_identity_and_bias():
    x = t64([1.0, 2.0, 3.0])
    assert np.allclose(
        T.fully_connected(x, t64(np.eye(3)), t64(np.zeros(3))).data, x.data)
    b = np.array([5.0, -1.0])
    out = T.fully_connected(x, t64(np.zeros((2, 3))), t64(b))
    assert np.allclose(out.data, b)


def test_fc_matches_dot_loop_oracle():
    rng = np.random.default_rng(5)
    x = rng.normal(size=48)
    w = rng.normal(size=(10, 48))
    b = rng.normal(size=10)
    out = T.fully_connected(t64(x), t64(w), t64(b)).data
    for m in range(10):
        acc = b[m]
        for n in range(48):
            acc += w[m, n] * x[n]
        assert abs(out[m] - acc) < 1e-9


def test_fc_length_mismatch():
    with pytest.raises(ShapeError):
        T.fully_connected(t64(np.zeros(4)), t64(np.zeros((2, 5))),
                          t64(np.zeros(2)))


# -- activations --------------------------------------------------------------

def test_activation_point_values():
    assert T.sigmoid(t64(0.0)).data == 0.5
    assert abs(T.leaky_relu(t64(-1.0), 0.2).data + 0.2) < 1e-12
    assert T.relu(t64(-3.0)).data == 0.0
    assert T.activation(t64(0.0), "tanh").data == 0.0


def test_leaky_relu_derivative_at_zero_is_alpha():
    x = t64(0.0, requires_grad=True)
    T.backward(T.leaky_relu(x, 0.2))
    assert x.grad == 0.2


def test_tanh_gradient_matches_finite_difference():
    rng = np.random.default_rng(6)
    x = t64(rng.normal(size=7), requires_grad=True)
    res = check_gradients(lambda: T.tsum(T.tanh(x)), {"x": x})
    assert res["x"] <= 1e-6


def test_activation_rejects_unknown_kind():
    with pytest.raises(ShapeError):
        T.activation(t64(1.0), "softplus")


# -- global_avg_pool ----------------------------------------------------------

def test_global_avg_pool_values():
    x = np.zeros((2, 2, 2))
    x[0] = 3.0
    x[1] = [[0.0, 2.0], [4.0, 6.0]]
    out = T.global_avg_pool(t64(x))
    assert np.allclose(out.data, [3.0, 3.0])


def test_global_avg_pool_matches_loop_oracle():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(3, 5, 4))
    out = T.global_avg_pool(t64(x)).data
    for c in range(3):
        assert abs(out[c] - x[c].sum() / 20.0) < 1e-12


# -- backward sweep -----------------------------------------------------------

def test_backward_sum_gives_ones():
    x = t64(np.zeros((3, 4)), requires_grad=True)
    T.backward(T.tsum(x))
    assert np.all(x.grad == 1.0)


def test_backward_half_square_gives_x():
    rng = np.random.default_rng(8)
    x = t64(rng.normal(size=6), requires_grad=True)
    T.backward(T.tsum(x * x) * 0.5)
    assert np.allclose(x.grad, x.data)


def test_two_consumers_sum_gradients():
    rng = np.random.default_rng(9)
    data = rng.normal(size=5)

    x = t64(data, requires_grad=True)
    T.backward(T.tsum(T.tanh(x)) + T.tsum(x * x))
    combined = x.grad.copy()

    a = t64(data, requires_grad=True)
    T.backward(T.tsum(T.tanh(a)))
    b = t64(data, requires_grad=True)
    T.backward(T.tsum(b * b))
    assert np.allclose(combined, a.grad + b.grad)


def test_backward_rejects_nonscalar_loss():
    with pytest.raises(ShapeError):
        T.backward(t64(np.zeros(3), requires_grad=True))


def test_detached_tensor_contributes_zero_gradient():
    x = t64([1.0, 2.0], requires_grad=True)
    y = T.tanh(x)
    T.backward(T.tsum(y.detach() * x))
    assert np.allclose(x.grad, np.tanh(x.data))


def test_tape_is_consumed():
    x = t64([1.0], requires_grad=True)
    y = T.tsum(x * x)
    T.backward(y)
    assert y._backward is None and y._parents == ()


def test_broadcast_gradients():
    a = t64(np.ones((3, 1)), requires_grad=True)
    b = t64(np.ones(4), requires_grad=True)
    T.backward(T.tsum(a * b))
    assert a.grad.shape == (3, 1) and np.all(a.grad == 4.0)
    assert b.grad.shape == (4,) and np.all(b.grad == 3.0)


def test_numeric_gradient_handles_relu_kink():
    # evaluation point exactly on the kink of one coordinate
    x = t64([0.5, 0.0, -0.5], requires_grad=True)
    num = numeric_gradient(lambda: float(T.tsum(T.relu(x)).data), x)
    assert abs(num[0] - 1.0) < 1e-6
    assert abs(num[2]) < 1e-6


# -- properties ---------------------------------------------------------------

@given(st.integers(2, 6), st.integers(2, 6), st.integers(0, 2 ** 31 - 1))
@settings(max_examples=20, deadline=None)
def test_conv2d_identity_kernel_property(h, w, seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(size=(1, h, w))
    kernel = np.zeros((1, 1, 3, 3))
    kernel[0, 0, 1, 1] = 1.0
    assert np.allclose(T.conv2d(t64(x), t64(kernel)).data, x)


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=20, deadline=None)
def test_elementwise_gradient_property(seed):
    rng = np.random.default_rng(seed)
    x = t64(rng.uniform(0.5, 2.0, size=5), requires_grad=True)
    res = check_gradients(
        lambda: T.tsum(T.log(x) + T.sqrt(x) + T.exp(x) + T.sigmoid(x)),
        {"x": x})
    assert res["x"] <= 1e-4


@given(st.integers(0, 2 ** 31 - 1))
@settings(max_examples=10, deadline=None)
def test_determinism_property(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 4, 4))
    k = rng.normal(size=(2, 2, 3, 3))
    a = T.conv2d(t64(x), t64(k), dilation=2).data
    b = T.conv2d(t64(x), t64(k), dilation=2).data
    assert np.array_equal(a, b)
