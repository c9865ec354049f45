"""
Compresión adaptativa de tokens por frame N -> M: PixelShuffle de bloques k x k,
AdaLN condicionado en x~ + TE y un MLP compartido.
"""
import math
from typing import Optional

import numpy as np
from loguru import logger

from pvc.errors import ShapeError
from pvc.models.schemas import PvcConfig
from pvc.models.tensors import CompressionParams, MlpParams, VideoBatch
from pvc.services.conditioning import (
    ada_ln,
    build_condition,
    frame_embedding,
    init_adaln,
    init_temporal_embedding,
)
from pvc.utils.tensor_engine import Rng, Tensor, check_finite, layer_norm, linear, reshape_permute, silu

# (B, T, by, iy, bx, ix, C) -> (B, T, by, bx, iy, ix, C)
_BLOCK_AXES = (0, 1, 2, 4, 3, 5, 6)


def grid_side(num_tokens: int, k: int) -> int:
    n = math.isqrt(num_tokens)
    if n * n != num_tokens:
        raise ShapeError(f"N={num_tokens} no es un cuadrado perfecto")
    if n % k:
        raise ShapeError(f"la grilla {n}x{n} no es divisible por k={k}")
    return n


def pixel_shuffle(x: Tensor, k: int) -> Tensor:
    """
    [B,T,N,C] -> [B,T,N/k^2,k^2*C]. Cada bloque k x k de la grilla n x n pasa a
    ser un token con los canales de sus k^2 tokens concatenados en orden row-major.
    """
    if x.ndim != 4:
        raise ShapeError(f"pixel_shuffle espera [B,T,N,C], recibió {x.shape}")
    b, t, num, c = x.shape
    n = grid_side(num, k)
    m = n // k
    blocks = x.reshape(b, t, m, k, m, k, c)
    return reshape_permute(blocks, (b, t, m * m, k * k * c), _BLOCK_AXES)


def pixel_unshuffle(y: Tensor, k: int) -> Tensor:
    """Inversa exacta de `pixel_shuffle`."""
    b, t, tokens, width = y.shape
    if width % (k * k):
        raise ShapeError(f"ancho {width} no divisible por k^2={k * k}")
    m = math.isqrt(tokens)
    if m * m != tokens:
        raise ShapeError(f"M={tokens} no es un cuadrado perfecto")
    c = width // (k * k)
    blocks = y.reshape(b, t, m, m, k, k, c)
    return reshape_permute(blocks, (b, t, tokens * k * k, c), _BLOCK_AXES)


def mlp(x: Tensor, p: MlpParams) -> Tensor:
    return linear(silu(linear(x, p.w_in, p.b_in)), p.w_out, p.b_out)


def compress(v: VideoBatch, p: CompressionParams, cfg: PvcConfig) -> Tensor:
    """v = MLP(AdaLN(x~; x~ + TE)) con x~ = PixelShuffle(x): [B,T,N,C] -> [B,T,M,C_out]."""
    shuffled = pixel_shuffle(v.features, cfg.shuffle_kernel)
    if p.adaptive:
        te = frame_embedding(v.timestamps, p.te, cfg.ts_scale)
        z = build_condition(shuffled, te, cfg.adaln_condition)
        normed = ada_ln(shuffled, z, p.adaln, cfg.norm_eps)
    else:
        normed = layer_norm(shuffled, -1, eps=cfg.norm_eps)
    out = mlp(normed, p.mlp)
    logger.debug(f"Compresión {v.features.shape} -> {out.shape}")
    return check_finite(out, "compress")


def init_compression(rng: Rng, cfg: PvcConfig, adaptive: bool = True) -> CompressionParams:
    d, f, c_out, std = cfg.shuffle_width, cfg.mlp_hidden, cfg.out_dim, cfg.init_std
    mlp_params = MlpParams(
        w_in=rng.child(0).normal((d, f), std),
        b_in=np.zeros(f),
        w_out=rng.child(1).normal((f, c_out), std),
        b_out=np.zeros(c_out),
    )
    if not adaptive:
        return CompressionParams(mlp=mlp_params)
    return CompressionParams(
        mlp=mlp_params,
        adaln=init_adaln(rng.child(2), d, std=std),
        te=init_temporal_embedding(rng.child(3), d, te_dim=cfg.te_dim, std=std),
    )


class AdaptiveCompressor:
    def __init__(self, cfg: PvcConfig, params: CompressionParams):
        if params.mlp.w_in.shape[0] != cfg.shuffle_width:
            raise ShapeError(f"MLP de entrada {params.mlp.w_in.shape[0]} != k^2*C={cfg.shuffle_width}")
        self.cfg = cfg
        self.params = params

    @classmethod
    def from_seed(cls, cfg: PvcConfig, seed: int, adaptive: bool = True) -> "AdaptiveCompressor":
        # Mismo flujo que la compresión de un modelo completo con esta semilla
        return cls(cfg, init_compression(Rng(seed).child(2), cfg, adaptive))

    def compress(self, v: VideoBatch) -> Tensor:
        return compress(v, self.params, self.cfg)

    def tokens_per_frame(self, num_patches: Optional[int] = None) -> int:
        num_patches = num_patches or self.cfg.num_patches
        return num_patches // self.cfg.shuffle_kernel ** 2
