"""
Condicionamiento temporal compartido por las capas del ViT y la compresión:
timestamps relativos, embedding sinusoidal, MLP de embedding temporal y AdaLN.
"""
from typing import Optional, Tuple

import numpy as np
from loguru import logger

from pvc.config import get_settings
from pvc.errors import ShapeError
from pvc.models.tensors import AdaLnParams, TemporalEmbeddingParams
from pvc.utils.tensor_engine import Rng, Tensor, check_finite, layer_norm, linear, silu

TE_DIM = 256


def relative_timestamps(num_frames: int) -> Tensor:
    """t = [0, 1/(T-1), ..., 1]; con T=1 el único frame recibe 0."""
    if num_frames < 1:
        raise ValueError(f"se necesita T >= 1, recibido {num_frames}")
    if num_frames == 1:
        return np.zeros(1)
    return np.arange(num_frames, dtype=np.float64) / (num_frames - 1)


def frequencies(dim: int = TE_DIM, scale: Optional[float] = None) -> Tensor:
    scale = get_settings().PVC_TS_SCALE if scale is None else scale
    half = dim // 2
    j = np.arange(half, dtype=np.float64)
    return np.power(10000.0, -j / max(half - 1, 1)) * scale


def sinusoidal_embed(t: Tensor, dim: int = TE_DIM, scale: Optional[float] = None) -> Tensor:
    """[T] -> [T, dim]: bloque seno seguido de bloque coseno."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 1:
        raise ShapeError(f"timestamps deben ser un vector, recibido {t.shape}")
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise ValueError("timestamps fuera de [0, 1]")
    angles = t[:, None] * frequencies(dim, scale)[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def temporal_embedding(t_tilde: Tensor, p: TemporalEmbeddingParams) -> Tensor:
    """TE = W2 . SiLU(W1 . t~), fila por fila: [T, 256] -> [T, D_out]."""
    if t_tilde.shape[-1] != p.w1.shape[0]:
        raise ShapeError(f"TE: entrada {t_tilde.shape} no coincide con W1 {p.w1.shape}")
    return linear(silu(linear(t_tilde, p.w1)), p.w2)


def affine_coeffs(z: Tensor, p: AdaLnParams) -> Tuple[Tensor, Tensor]:
    """gamma(z) = W4 . SiLU(W3 z), beta(z) = W6 . SiLU(W5 z), por token."""
    if z.shape[-1] != p.dim:
        raise ShapeError(f"AdaLN: condición {z.shape} no coincide con D={p.dim}")
    gamma = linear(silu(linear(z, p.w3)), p.w4)
    beta = linear(silu(linear(z, p.w5)), p.w6)
    return gamma, beta


def ada_ln(x: Tensor, z: Optional[Tensor], p: Optional[AdaLnParams], eps: Optional[float] = None) -> Tensor:
    """
    gamma(z) * LayerNorm(x) + beta(z). La LayerNorm interna no tiene afinidad
    propia. Sin condición (z=None) se reduce a una LayerNorm simple.
    """
    normed = layer_norm(x, axis=-1, eps=eps)
    if z is None:
        return normed
    if z.shape != x.shape:
        raise ShapeError(f"AdaLN: x {x.shape} y z {z.shape} difieren")
    gamma, beta = affine_coeffs(z, p)
    return check_finite(gamma * normed + beta, "ada_ln")


def broadcast_frames(te: Tensor, like: Tensor) -> Tensor:
    """TE [T, D] -> forma de `like` [B, T, N, D], igual en todos los tokens de un frame."""
    return np.broadcast_to(te[None, :, None, :], like.shape)


def build_condition(x: Tensor, te: Tensor, mode: str) -> Optional[Tensor]:
    if mode == "x_te":
        return x + broadcast_frames(te, x)
    if mode == "te":
        return np.ascontiguousarray(broadcast_frames(te, x))
    if mode == "none":
        return None
    raise ValueError(f"condición AdaLN desconocida: {mode}")


def frame_embedding(timestamps: Tensor, p: TemporalEmbeddingParams, scale: Optional[float] = None) -> Tensor:
    t_tilde = sinusoidal_embed(timestamps, dim=p.w1.shape[0], scale=scale)
    te = temporal_embedding(t_tilde, p)
    logger.debug(f"TE calculado para {len(timestamps)} frames, ancho {te.shape[-1]}")
    return te


def init_temporal_embedding(rng: Rng, d_out: int, hidden: Optional[int] = None,
                            te_dim: int = TE_DIM, std: Optional[float] = None) -> TemporalEmbeddingParams:
    std = get_settings().PVC_INIT_STD if std is None else std
    hidden = hidden or d_out
    return TemporalEmbeddingParams(
        w1=rng.child(0).normal((te_dim, hidden), std),
        w2=rng.child(1).normal((hidden, d_out), std),
    )


def init_adaln(rng: Rng, dim: int, hidden: Optional[int] = None, std: Optional[float] = None) -> AdaLnParams:
    std = get_settings().PVC_INIT_STD if std is None else std
    hidden = hidden or dim
    return AdaLnParams(
        w3=rng.child(0).normal((dim, hidden), std),
        w4=rng.child(1).normal((hidden, dim), std),
        w5=rng.child(2).normal((dim, hidden), std),
        w6=rng.child(3).normal((hidden, dim), std),
    )
