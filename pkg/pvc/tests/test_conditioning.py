import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from pvc.errors import ShapeError
from pvc.models.tensors import AdaLnParams
from pvc.services.conditioning import (
    TE_DIM,
    ada_ln,
    affine_coeffs,
    build_condition,
    frame_embedding,
    frequencies,
    init_adaln,
    init_temporal_embedding,
    relative_timestamps,
    sinusoidal_embed,
    temporal_embedding,
)
from pvc.utils.tensor_engine import Rng, layer_norm


def test_relative_timestamps():
    assert_array_equal(relative_timestamps(1), [0.0])
    assert_array_equal(relative_timestamps(5), [0.0, 0.25, 0.5, 0.75, 1.0])
    with pytest.raises(ValueError):
        relative_timestamps(0)


def test_relative_timestamps_are_evenly_spaced():
    for frames in range(2, 101):
        ts = relative_timestamps(frames)
        assert (ts[0], ts[-1]) == (0.0, 1.0)
        assert_allclose(np.diff(ts), 1.0 / (frames - 1), rtol=1e-12, err_msg=f"T={frames}")
        assert np.all(np.diff(ts) > 0)


def test_affine_coeffs_follow_token_order(rng):
    p = init_adaln(rng.child(5), 8, hidden=6, std=0.5)
    z = rng.child(6).normal((1, 2, 7, 8))
    perm = np.random.default_rng(7).permutation(7)
    gamma, beta = affine_coeffs(z, p)
    gamma_p, beta_p = affine_coeffs(z[:, :, perm], p)
    assert_allclose(gamma_p, gamma[:, :, perm], atol=1e-12)
    assert_allclose(beta_p, beta[:, :, perm], atol=1e-12)
    # Un token no depende de los demás
    changed = z.copy()
    changed[:, :, 0] += 1.0
    assert_array_equal(affine_coeffs(changed, p)[0][:, :, 1:], gamma[:, :, 1:])


def test_frequencies_span():
    f = frequencies(TE_DIM, scale=1000.0)
    assert f.shape == (128,)
    assert f[0] == 1000.0
    assert f[-1] == pytest.approx(0.1, rel=1e-12)
    assert np.all(np.diff(f) < 0)


def test_sinusoidal_embed_layout():
    emb = sinusoidal_embed(np.array([0.0, 0.5, 1.0]), dim=TE_DIM, scale=1000.0)
    assert emb.shape == (3, TE_DIM)
    assert_array_equal(emb[0, :128], 0.0)
    assert_array_equal(emb[0, 128:], 1.0)
    f = frequencies(TE_DIM, 1000.0)
    assert_allclose(emb[1, :128], np.sin(0.5 * f))
    assert_allclose(emb[1, 128:], np.cos(0.5 * f))
    assert len({row.tobytes() for row in emb}) == 3


def test_sinusoidal_embed_rejects_out_of_range():
    with pytest.raises(ValueError):
        sinusoidal_embed(np.array([0.0, 1.5]))
    with pytest.raises(ShapeError):
        sinusoidal_embed(np.zeros((2, 2)))


def test_temporal_embedding_shapes(rng):
    p = init_temporal_embedding(rng, d_out=32, hidden=16)
    te = frame_embedding(relative_timestamps(4), p)
    assert te.shape == (4, 32)
    with pytest.raises(ShapeError):
        temporal_embedding(np.zeros((4, 8)), p)


def test_ada_ln_with_zero_weights_is_zero(rng):
    x = rng.child(0).normal((1, 2, 3, 8))
    zeros = np.zeros((8, 8))
    p = AdaLnParams(w3=zeros, w4=zeros, w5=zeros, w6=zeros)
    assert_array_equal(ada_ln(x, x, p), 0.0)


def test_ada_ln_without_condition_is_plain_layer_norm(rng):
    x = rng.child(1).normal((1, 2, 3, 8))
    assert_array_equal(ada_ln(x, None, None, eps=1e-6), layer_norm(x, eps=1e-6))


def test_ada_ln_matches_formula(rng):
    x = rng.child(2).normal((1, 2, 3, 8))
    z = rng.child(3).normal((1, 2, 3, 8))
    p = init_adaln(rng.child(4), 8, hidden=4, std=0.5)

    def silu(a):
        return a / (1.0 + np.exp(-a))

    gamma = silu(z @ p.w3) @ p.w4
    beta = silu(z @ p.w5) @ p.w6
    assert_allclose(ada_ln(x, z, p, eps=1e-6), gamma * layer_norm(x, eps=1e-6) + beta, atol=1e-12)


def test_ada_ln_shape_mismatch(rng):
    p = init_adaln(rng, 8)
    with pytest.raises(ShapeError):
        ada_ln(np.zeros((1, 2, 3, 8)), np.zeros((1, 2, 4, 8)), p)


def test_build_condition_modes(rng):
    x = rng.child(5).normal((2, 3, 4, 6))
    te = rng.child(6).normal((3, 6))
    z = build_condition(x, te, "x_te")
    assert_allclose(z[1, 2, 3], x[1, 2, 3] + te[2])
    z_te = build_condition(x, te, "te")
    assert_array_equal(z_te[0, 1, 2], te[1])
    assert z_te.flags["C_CONTIGUOUS"]
    assert build_condition(x, te, "none") is None
    with pytest.raises(ValueError):
        build_condition(x, te, "other")


def test_initializers_are_seeded():
    a = init_adaln(Rng(7), 8)
    b = init_adaln(Rng(7), 8)
    for (_, ta), (_, tb) in zip(a.named_tensors(), b.named_tensors()):
        assert_array_equal(ta, tb)
