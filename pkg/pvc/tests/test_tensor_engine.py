import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from pvc.errors import NonFiniteError, ShapeError
from pvc.utils.tensor_engine import (
    Rng,
    as_tensor,
    check_finite,
    gelu,
    gelu_grad,
    inverse_axes,
    layer_norm,
    linear,
    matmul,
    reshape_permute,
    sigmoid,
    silu,
    silu_grad,
    softmax,
)


def test_as_tensor_checks_shape():
    x = as_tensor([1, 2, 3, 4, 5, 6], shape=(2, 3))
    assert x.shape == (2, 3)
    assert x.dtype == np.float64
    with pytest.raises(ShapeError):
        as_tensor([1, 2, 3], shape=(2, 2))
    with pytest.raises(ShapeError):
        as_tensor([], shape=(0,))


def test_as_tensor_rejects_non_finite():
    with pytest.raises(NonFiniteError):
        as_tensor([1.0, np.nan])


def test_matmul_and_linear():
    a = as_tensor(np.arange(6), shape=(2, 3))
    b = as_tensor(np.arange(12), shape=(3, 4))
    assert_array_equal(matmul(a, b), a @ b)
    with pytest.raises(ShapeError):
        matmul(a, a)
    x = np.ones((2, 5, 3))
    y = linear(x, b, np.arange(4.0))
    assert y.shape == (2, 5, 4)
    assert_allclose(y[1, 2], np.ones(3) @ b + np.arange(4.0))
    with pytest.raises(ShapeError):
        linear(x, b, np.zeros(3))


def test_softmax_rows_and_mask():
    x = np.array([[1.0, 2.0, 3.0], [1000.0, 1000.0, 1000.0]])
    p = softmax(x)
    assert_allclose(p.sum(axis=-1), 1.0, atol=1e-15)
    assert_allclose(p[1], 1.0 / 3.0)
    mask = np.array([[False, True, True], [False, False, True]])
    pm = softmax(x, mask=mask)
    assert pm[0, 1] == 0.0 and pm[0, 2] == 0.0
    assert pm[0, 0] == 1.0
    assert_allclose(pm[1, :2], 0.5)


def test_layer_norm_moments():
    x = Rng(3).normal((4, 16), std=5.0, mean=2.0)
    y = layer_norm(x, eps=0.0)
    assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    assert_allclose(y.var(axis=-1), 1.0, atol=1e-12)
    gamma, beta = np.full(16, 2.0), np.full(16, -1.0)
    assert_allclose(layer_norm(x, gamma=gamma, beta=beta, eps=0.0), 2.0 * y - 1.0, atol=1e-12)
    with pytest.raises(ShapeError):
        layer_norm(x, gamma=np.ones(3))


def test_layer_norm_other_axis():
    x = Rng(4).normal((5, 3))
    assert_allclose(layer_norm(x, axis=0), layer_norm(x.T, axis=-1).T, atol=1e-14)


def test_activations():
    assert sigmoid(np.array(0.0)) == 0.5
    assert np.all(np.isfinite(sigmoid(np.array([-1000.0, 1000.0]))))
    assert silu_grad(np.array(0.0)) == pytest.approx(0.5, abs=1e-9)
    x = np.linspace(-3, 3, 13)
    h = 1e-6
    assert_allclose(silu_grad(x), (silu(x + h) - silu(x - h)) / (2 * h), atol=1e-8)
    assert_allclose(gelu_grad(x), (gelu(x + h) - gelu(x - h)) / (2 * h), atol=1e-8)
    assert gelu(np.array(0.0)) == 0.0


def test_reshape_permute_roundtrip():
    x = np.arange(24.0).reshape(2, 3, 4)
    axes = (2, 0, 1)
    y = reshape_permute(x, None, axes)
    assert y.shape == (4, 2, 3)
    assert y.flags["C_CONTIGUOUS"]
    assert_array_equal(reshape_permute(y, None, inverse_axes(axes)), x)
    with pytest.raises(ShapeError):
        reshape_permute(x, (5, 5))
    with pytest.raises(ShapeError):
        reshape_permute(x, None, (0, 0, 1))


def test_check_finite():
    with pytest.raises(NonFiniteError):
        check_finite(np.array([np.inf]), "op")


def test_rng_is_deterministic_and_forks():
    a = Rng(42).normal((3, 3))
    b = Rng(42).normal((3, 3))
    assert_array_equal(a, b)
    assert not np.array_equal(Rng(42).child(0).normal((3,)), Rng(42).child(1).normal((3,)))
    assert_array_equal(Rng(42).child(5).uniform((4,)), Rng(42).child(5).uniform((4,)))
