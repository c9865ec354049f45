import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from pvc.errors import ShapeError
from pvc.models.schemas import PvcConfig
from pvc.models.tensors import VideoBatch
from pvc.services.adaptive_compression import (
    AdaptiveCompressor,
    compress,
    init_compression,
    pixel_shuffle,
    pixel_unshuffle,
)
from pvc.services.conditioning import relative_timestamps
from pvc.services.verification import check_static_distinctness
from pvc.utils.tensor_engine import Rng, layer_norm, silu


def shuffle_oracle(x, k):
    b, t, num, c = x.shape
    n = int(round(num ** 0.5))
    m = n // k
    out = np.zeros((b, t, m * m, k * k * c))
    for by in range(m):
        for bx in range(m):
            for iy in range(k):
                for ix in range(k):
                    src = (by * k + iy) * n + (bx * k + ix)
                    dst = (iy * k + ix) * c
                    out[:, :, by * m + bx, dst:dst + c] = x[:, :, src]
    return out


def test_pixel_shuffle_matches_index_oracle():
    gen = np.random.default_rng(2024)
    for _ in range(100):
        n = int(gen.integers(1, 17))
        k = int(gen.choice([d for d in range(1, n + 1) if n % d == 0]))
        c = int(gen.integers(1, 6))
        x = gen.standard_normal((1, 2, n * n, c))
        y = pixel_shuffle(x, k)
        assert y.tobytes() == shuffle_oracle(x, k).tobytes()
        assert pixel_unshuffle(y, k).tobytes() == x.tobytes()


def test_pixel_shuffle_shape_errors():
    with pytest.raises(ShapeError):
        pixel_shuffle(np.zeros((1, 1, 15, 2)), 1)
    with pytest.raises(ShapeError):
        pixel_shuffle(np.zeros((1, 1, 36, 2)), 4)
    with pytest.raises(ShapeError):
        pixel_shuffle(np.zeros((36, 2)), 2)


def test_token_arithmetic_for_full_geometry():
    cfg = PvcConfig()
    assert cfg.num_patches == 1024
    assert cfg.tokens_per_frame == 64
    assert cfg.t_img * cfg.tokens_per_frame == 256
    assert 64 * cfg.tokens_per_frame == 4096


def test_compress_shapes(toy_cfg):
    comp = AdaptiveCompressor.from_seed(toy_cfg, 0)
    v = VideoBatch(features=Rng(0).normal((2, 3, 64, 32)), timestamps=relative_timestamps(3))
    tokens = comp.compress(v)
    assert tokens.shape == (2, 3, 4, 32)
    assert comp.tokens_per_frame() == 4


def test_compress_custom_output_width(toy_cfg):
    cfg = toy_cfg.model_copy(update={"compress_hidden": 64, "compress_out": 48})
    params = init_compression(Rng(1), cfg)
    v = VideoBatch(features=Rng(2).normal((1, 2, 64, 32)), timestamps=relative_timestamps(2))
    assert compress(v, params, cfg).shape == (1, 2, 4, 48)


def test_baseline_compression_is_layer_norm_plus_mlp(toy_cfg):
    params = init_compression(Rng(3), toy_cfg, adaptive=False)
    assert not params.adaptive
    x = Rng(4).normal((1, 2, 64, 32))
    v = VideoBatch(features=x, timestamps=relative_timestamps(2))
    h = layer_norm(pixel_shuffle(x, 4), eps=toy_cfg.norm_eps)
    expected = silu(h @ params.mlp.w_in + params.mlp.b_in) @ params.mlp.w_out + params.mlp.b_out
    assert_allclose(compress(v, params, toy_cfg), expected, atol=1e-12)


def test_compressor_rejects_mismatched_params(toy_cfg):
    params = init_compression(Rng(5), toy_cfg)
    other = toy_cfg.model_copy(update={"shuffle_kernel": 2})
    with pytest.raises(ShapeError):
        AdaptiveCompressor(other, params)


def test_compression_is_per_frame(toy_cfg):
    comp = AdaptiveCompressor.from_seed(toy_cfg, 6)
    x = Rng(6).normal((1, 4, 64, 32))
    ts = relative_timestamps(4)
    base = comp.compress(VideoBatch(features=x, timestamps=ts))
    changed = x.copy()
    changed[:, 2] += 1.0
    out = comp.compress(VideoBatch(features=changed, timestamps=ts))
    assert_array_equal(out[:, [0, 1, 3]], base[:, [0, 1, 3]])


def test_static_frames_become_distinct_over_seeds(toy_cfg):
    for seed in range(20):
        report = check_static_distinctness(toy_cfg, seed)
        assert report.passed, report.to_text()
        assert report.metrics["min_pairwise_l2"] > 1e-6
        assert report.metrics["zeroed_max_diff"] == 0.0


def test_adaptive_compress_matches_naive_composition(toy_cfg):
    cfg = toy_cfg.model_copy(update={"init_std": 0.1})
    params = init_compression(Rng(7), cfg)
    x = Rng(8).normal((2, 3, 64, 32))
    ts = relative_timestamps(3)

    def silu_(a):
        return a / (1.0 + np.exp(-a))

    half = params.te.w1.shape[0] // 2
    freqs = 10000.0 ** (-np.arange(half) / (half - 1)) * cfg.ts_scale
    expected = np.zeros((2, 3, 4, cfg.out_dim))
    shuffled = shuffle_oracle(x, 4)
    for t, stamp in enumerate(ts):
        t_tilde = np.concatenate([np.sin(stamp * freqs), np.cos(stamp * freqs)])
        te = silu_(t_tilde @ params.te.w1) @ params.te.w2
        for b in range(2):
            for m in range(4):
                tok = shuffled[b, t, m]
                z = tok + te
                normed = (tok - tok.mean()) / np.sqrt(tok.var() + cfg.norm_eps)
                gamma = silu_(z @ params.adaln.w3) @ params.adaln.w4
                beta = silu_(z @ params.adaln.w5) @ params.adaln.w6
                a = gamma * normed + beta
                expected[b, t, m] = silu_(a @ params.mlp.w_in + params.mlp.b_in) @ params.mlp.w_out + params.mlp.b_out
    out = compress(VideoBatch(features=x, timestamps=ts), params, cfg)
    assert_allclose(out, expected, rtol=1e-9, atol=1e-10)
