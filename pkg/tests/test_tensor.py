import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

import hybridfb.functional as F
from hybridfb.gradcheck import check_gradients, numeric_grad
from hybridfb.tensor import NonFiniteError, Tensor, no_grad, parameter

finite = st.floats(-10, 10, allow_nan=False, width=64)


def test_scalar_backward_accumulates():
    x = parameter(np.array([1.0, 2.0, 3.0]), dtype=np.float64)
    y = F.sum(F.mul(x, x))
    y.backward()
    np.testing.assert_allclose(x.grad, 2 * x.data)
    F.sum(x).backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_shared_subexpression():
    x = parameter(np.array([0.5, -1.5]), dtype=np.float64)
    h = F.mul(x, 3.0)
    F.sum(F.add(h, F.mul(h, h))).backward()
    np.testing.assert_allclose(x.grad, 3 + 18 * x.data)


def test_backward_needs_scalar():
    x = parameter(np.ones((2, 2)))
    with pytest.raises(ValueError):
        F.mul(x, 2.0).backward()


def test_no_grad_cuts_tape():
    x = parameter(np.ones(3))
    with no_grad():
        y = F.mul(x, 2.0)
    assert not y.requires_grad
    F.sum(y).backward()
    assert x.grad is None


def test_detach():
    x = parameter(np.ones(3))
    F.sum(F.mul(x.detach(), 2.0)).backward()
    assert x.grad is None


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_raises():
    x = parameter(np.array([0.0, 1.0]))
    with pytest.raises(NonFiniteError):
        F.reciprocal(x)
    with pytest.raises(NonFiniteError):
        F.mul(x, np.inf)


def test_int_input_promotes_to_float():
    assert Tensor([1, 2]).dtype.kind == "f"


def test_loss_is_zero_dimensional():
    x = parameter(np.ones((3, 2)), dtype=np.float64)
    assert F.softmax_cross_entropy(x, np.array([0, 1, 0])).shape == ()


def test_numeric_grad_quadratic():
    x = Tensor(np.array([1.0, -2.0]), requires_grad=True, dtype=np.float64)
    g = numeric_grad(lambda: F.sum(F.square(x)), x)
    np.testing.assert_allclose(g, [2.0, -4.0], rtol=1e-8)


def test_gradcheck_requires_float64():
    x = parameter(np.ones(2), dtype=np.float32)
    with pytest.raises(TypeError):
        check_gradients(lambda: F.sum(x), [x])


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (3, 4), elements=finite), arrays(np.float64, (4,), elements=finite))
def test_broadcast_mul_gradients(a, b):
    ta = Tensor(a, requires_grad=True, dtype=np.float64)
    tb = Tensor(b, requires_grad=True, dtype=np.float64)
    F.sum(F.mul(ta, tb)).backward()
    np.testing.assert_allclose(ta.grad, np.broadcast_to(b, a.shape))
    np.testing.assert_allclose(tb.grad, a.sum(0))


@settings(max_examples=20, deadline=None)
@given(arrays(np.float64, (2, 5), elements=finite))
def test_log_softmax_normalises(x):
    p = np.exp(F.log_softmax(Tensor(x, dtype=np.float64)).data)
    np.testing.assert_allclose(p.sum(1), 1.0, rtol=1e-12)


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 5, 5))
    w = rng.normal(size=(4, 3, 3, 3))
    out = F.conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), stride=2, padding=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((2, 4, 3, 3))
    for i in range(3):
        for j in range(3):
            patch = xp[:, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
            ref[:, :, i, j] = np.einsum("nchw,ochw->no", patch, w)
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_depthwise_matches_grouped_conv():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 3, 6, 6))
    w = rng.normal(size=(3, 1, 3, 3))
    dw = F.depthwise_conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), 1, 1).data
    for c in range(3):
        ref = F.conv2d(Tensor(x[:, c:c + 1], dtype=np.float64), Tensor(w[c:c + 1], dtype=np.float64), 1, 1).data
        np.testing.assert_allclose(dw[:, c:c + 1], ref, rtol=1e-12)


def test_batchnorm_eval_uses_running_stats():
    x = Tensor(np.ones((2, 2, 2, 2)), dtype=np.float64)
    g = Tensor(np.ones(2), dtype=np.float64)
    b = Tensor(np.zeros(2), dtype=np.float64)
    out = F.batchnorm(x, g, b, np.array([1.0, 0.0]), np.array([1.0, 4.0]), training=False, eps=0.0)
    np.testing.assert_allclose(out.data[:, 0], 0.0)
    np.testing.assert_allclose(out.data[:, 1], 0.5)


def test_concat_channels_shape_check():
    with pytest.raises(ValueError):
        F.concat_channels(Tensor(np.ones((1, 2, 3, 3))), Tensor(np.ones((1, 2, 4, 4))))
