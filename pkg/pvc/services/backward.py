"""
Derivadas en modo reverso, escritas a mano, de los módulos nuevos del stack:
LayerNorm, softmax, atención (con máscara causal), embedding temporal, AdaLN,
la capa progresiva con compuerta y la cabeza de compresión.

Cada `*_backward` recibe las mismas entradas que el forward más el gradiente
que llega a la salida, y devuelve el gradiente de la entrada junto a un dict
de gradientes con los mismos nombres jerárquicos que `named_tensors`.
"""
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from pvc.errors import ShapeError
from pvc.models.schemas import PvcConfig
from pvc.models.tensors import (
    AdaLnParams,
    AttentionParams,
    CompressionParams,
    LayerParams,
    TemporalEmbeddingParams,
    VideoBatch,
)
from pvc.services.adaptive_compression import pixel_shuffle, pixel_unshuffle
from pvc.services.conditioning import (
    ada_ln,
    affine_coeffs,
    build_condition,
    sinusoidal_embed,
    temporal_embedding,
)
from pvc.services.progressive_vit import (
    attention,
    from_frames,
    from_tracks,
    merge_heads,
    progressive_layer_forward,
    split_heads,
    temporal_branch,
    to_frames,
    to_tracks,
)
from pvc.utils.tensor_engine import Tensor, gelu, gelu_grad, layer_norm, linear, silu, silu_grad

Grads = Dict[str, Tensor]


def _prefixed(prefix: str, grads: Grads) -> Grads:
    return {f"{prefix}.{k}": v for k, v in grads.items()}


def _zeros_like(bundle, prefix: str) -> Grads:
    return {f"{prefix}.{k}": np.zeros_like(t) for k, t in bundle.named_tensors()}


def linear_backward(x: Tensor, w: Tensor, dy: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
    """y = x @ w + b  ->  (dx, dw, db)."""
    if dy.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear_backward: gradiente {dy.shape} no coincide con {w.shape}")
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dx = np.matmul(dy2, w.T).reshape(x.shape)
    return dx, np.matmul(x2.T, dy2), dy2.sum(axis=0)


def silu_mlp_backward(x: Tensor, w_a: Tensor, w_b: Tensor, dy: Tensor) -> Tuple[Tensor, Tensor, Tensor]:
    """y = SiLU(x @ w_a) @ w_b  ->  (dx, dw_a, dw_b)."""
    a = linear(x, w_a)
    dh, dw_b, _ = linear_backward(silu(a), w_b, dy)
    dx, dw_a, _ = linear_backward(x, w_a, dh * silu_grad(a))
    return dx, dw_a, dw_b


def layer_norm_backward(x: Tensor, dy: Tensor, gamma: Optional[Tensor] = None,
                        eps: float = 1e-6) -> Tuple[Tensor, Optional[Tensor], Optional[Tensor]]:
    """Fórmula de tres términos sobre el último eje, con el mismo eps del forward."""
    mean = np.mean(x, axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(np.mean((x - mean) ** 2, axis=-1, keepdims=True) + eps)
    xhat = (x - mean) * inv_std
    dxhat = dy if gamma is None else dy * gamma
    dx = inv_std * (
        dxhat
        - np.mean(dxhat, axis=-1, keepdims=True)
        - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True)
    )
    if gamma is None:
        return dx, None, None
    lead = tuple(range(x.ndim - 1))
    return dx, np.sum(dy * xhat, axis=lead), np.sum(dy, axis=lead)


def softmax_backward(probs: Tensor, dprobs: Tensor) -> Tensor:
    # Las posiciones enmascaradas tienen prob 0 y reciben gradiente 0 exacto
    return probs * (dprobs - np.sum(dprobs * probs, axis=-1, keepdims=True))


def attention_backward(cache: Dict[str, Tensor], p: AttentionParams, heads: int,
                       dout: Tensor) -> Tuple[Tensor, Grads]:
    x, q, k, v, probs, context = (cache[n] for n in ("x", "q", "k", "v", "probs", "context"))
    scale = 1.0 / np.sqrt(x.shape[-1] // heads)

    d_context, dwo, dbo = linear_backward(context, p.wo, dout)
    d_heads = split_heads(d_context, heads)
    dprobs = np.matmul(d_heads, v.transpose(0, 1, 3, 2))
    dv = np.matmul(probs.transpose(0, 1, 3, 2), d_heads)
    dscores = softmax_backward(probs, dprobs) * scale
    dq = np.matmul(dscores, k)
    dk = np.matmul(dscores.transpose(0, 1, 3, 2), q)

    grads: Grads = {}
    dx = np.zeros_like(x)
    for name, d in (("q", dq), ("k", dk), ("v", dv)):
        dx_part, dw, db = linear_backward(x, getattr(p, f"w{name}"), merge_heads(d))
        dx += dx_part
        grads[f"w{name}"] = dw
        grads[f"b{name}"] = db
    grads["wo"] = dwo
    grads["bo"] = dbo
    return dx, grads


def temporal_embedding_backward(t_tilde: Tensor, p: TemporalEmbeddingParams, dte: Tensor) -> Tuple[Tensor, Grads]:
    dt, dw1, dw2 = silu_mlp_backward(t_tilde, p.w1, p.w2, dte)
    return dt, {"w1": dw1, "w2": dw2}


def ada_ln_backward(x: Tensor, z: Optional[Tensor], p: Optional[AdaLnParams], dout: Tensor,
                    eps: float) -> Tuple[Tensor, Optional[Tensor], Grads]:
    """-> (dx por la rama LayerNorm, dz, gradientes de W3..W6)."""
    if z is None:
        dx, _, _ = layer_norm_backward(x, dout, eps=eps)
        return dx, None, {}
    gamma, _ = affine_coeffs(z, p)
    normed = layer_norm(x, -1, eps=eps)
    dx, _, _ = layer_norm_backward(x, dout * gamma, eps=eps)
    dz_gamma, dw3, dw4 = silu_mlp_backward(z, p.w3, p.w4, dout * normed)
    dz_beta, dw5, dw6 = silu_mlp_backward(z, p.w5, p.w6, dout)
    return dx, dz_gamma + dz_beta, {"w3": dw3, "w4": dw4, "w5": dw5, "w6": dw6}


def condition_backward(dz: Optional[Tensor], mode: str) -> Tuple[Optional[Tensor], Optional[Tensor]]:
    """z = x + TE (o sólo TE)  ->  (aporte a dx, dTE por frame)."""
    if dz is None:
        return None, None
    dte = np.sum(dz, axis=(0, 2))
    return (dz if mode == "x_te" else None), dte


def conditioned_norm_backward(x: Tensor, timestamps: Tensor, adaln: AdaLnParams, te: TemporalEmbeddingParams,
                              cfg: PvcConfig, dnormed: Tensor) -> Tuple[Tensor, Grads]:
    """Gradiente de AdaLN(x; cond(x, TE(t))): x recibe gradiente por la LayerNorm y por la condición."""
    t_tilde = sinusoidal_embed(timestamps, dim=te.w1.shape[0], scale=cfg.ts_scale)
    z = build_condition(x, temporal_embedding(t_tilde, te), cfg.adaln_condition)
    dx, dz, g_adaln = ada_ln_backward(x, z, adaln, dnormed, cfg.norm_eps)
    dx_cond, dte = condition_backward(dz, cfg.adaln_condition)
    if dx_cond is not None:
        dx = dx + dx_cond
    if dte is None:
        grads = {**_zeros_like(adaln, "adaln"), **_zeros_like(te, "te")}
    else:
        _, g_te = temporal_embedding_backward(t_tilde, te, dte)
        grads = {**_prefixed("adaln", g_adaln), **_prefixed("te", g_te)}
    return dx, grads


def temporal_branch_backward(x: Tensor, timestamps: Tensor, p: LayerParams, cfg: PvcConfig,
                             dbranch: Tensor) -> Tuple[Tensor, Grads]:
    b, _, n, _ = x.shape
    te = temporal_embedding(sinusoidal_embed(timestamps, dim=p.te.w1.shape[0], scale=cfg.ts_scale), p.te)
    a = ada_ln(x, build_condition(x, te, cfg.adaln_condition), p.adaln, cfg.norm_eps)
    cache: Dict[str, Tensor] = {}
    attention(to_tracks(a), p.tmha, cfg.heads, causal=True, cache=cache)
    d_tracks, g_tmha = attention_backward(cache, p.tmha, cfg.heads, to_tracks(dbranch))
    dx, g_cond = conditioned_norm_backward(x, timestamps, p.adaln, p.te, cfg, from_tracks(d_tracks, b, n))
    return dx, {**_prefixed("tmha", g_tmha), **g_cond}


def progressive_layer_backward(x0: Tensor, timestamps: Tensor, p: LayerParams, cfg: PvcConfig,
                               dout: Tensor) -> Tuple[Tensor, Grads]:
    """
    Reverso de x1 = x0 + S-MHA(LN1(x0)); x2 = x1 + alpha * T-MHA(AdaLN(x1; x1 + TE));
    x3 = x2 + FFN(LN2(x2)). Con alpha = 0 el gradiente de alpha sigue siendo
    sum(dx2 * rama), distinto de cero en general.
    """
    b, t, _, _ = x0.shape
    eps = cfg.norm_eps
    h1 = layer_norm(x0, -1, p.ln1.gamma, p.ln1.beta, eps)
    s_cache: Dict[str, Tensor] = {}
    x1 = x0 + from_frames(attention(to_frames(h1), p.smha, cfg.heads, cache=s_cache), b, t)
    branch = temporal_branch(x1, timestamps, p, cfg) if p.is_temporal else None
    x2 = x1 if branch is None else x1 + p.gate_alpha * branch
    h2 = layer_norm(x2, -1, p.ln2.gamma, p.ln2.beta, eps)
    u = linear(h2, p.ffn.w_in, p.ffn.b_in)

    dg, dw_out, db_out = linear_backward(gelu(u), p.ffn.w_out, dout)
    dh2, dw_in, db_in = linear_backward(h2, p.ffn.w_in, dg * gelu_grad(u))
    dx2_ln, dgamma2, dbeta2 = layer_norm_backward(x2, dh2, p.ln2.gamma, eps)
    dx2 = dout + dx2_ln
    grads: Grads = {
        "ln2.gamma": dgamma2, "ln2.beta": dbeta2,
        "ffn.w_in": dw_in, "ffn.b_in": db_in, "ffn.w_out": dw_out, "ffn.b_out": db_out,
    }

    dx1 = dx2
    if branch is not None:
        grads["gate_alpha"] = np.sum(dx2 * branch, axis=(0, 1, 2))
        dx_branch, g_branch = temporal_branch_backward(x1, timestamps, p, cfg, dx2 * p.gate_alpha)
        dx1 = dx2 + dx_branch
        grads.update(g_branch)

    d_attn, g_smha = attention_backward(s_cache, p.smha, cfg.heads, to_frames(dx1))
    dx0_ln, dgamma1, dbeta1 = layer_norm_backward(x0, from_frames(d_attn, b, t), p.ln1.gamma, eps)
    grads.update({"ln1.gamma": dgamma1, "ln1.beta": dbeta1, **_prefixed("smha", g_smha)})
    return dx1 + dx0_ln, grads


def stack_backward(v: VideoBatch, layers: Sequence[LayerParams], cfg: PvcConfig,
                   dout: Tensor) -> Tuple[Tensor, List[Grads]]:
    inputs = []
    for layer in layers:
        inputs.append(v.features)
        v = progressive_layer_forward(v, layer, cfg)
    dx = dout
    grads: List[Grads] = []
    for x_in, layer in zip(reversed(inputs), reversed(layers)):
        dx, g = progressive_layer_backward(x_in, v.timestamps, layer, cfg, dx)
        grads.insert(0, g)
    return dx, grads


def compression_backward(x: Tensor, timestamps: Tensor, p: CompressionParams, cfg: PvcConfig,
                         dout: Tensor) -> Tuple[Tensor, Grads]:
    k = cfg.shuffle_kernel
    shuffled = pixel_shuffle(x, k)
    if p.adaptive:
        te = temporal_embedding(sinusoidal_embed(timestamps, dim=p.te.w1.shape[0], scale=cfg.ts_scale), p.te)
        normed = ada_ln(shuffled, build_condition(shuffled, te, cfg.adaln_condition), p.adaln, cfg.norm_eps)
    else:
        normed = layer_norm(shuffled, -1, eps=cfg.norm_eps)

    a = linear(normed, p.mlp.w_in, p.mlp.b_in)
    dh, dw_out, db_out = linear_backward(silu(a), p.mlp.w_out, dout)
    dnormed, dw_in, db_in = linear_backward(normed, p.mlp.w_in, dh * silu_grad(a))
    grads: Grads = {"mlp.w_in": dw_in, "mlp.b_in": db_in, "mlp.w_out": dw_out, "mlp.b_out": db_out}

    if p.adaptive:
        dshuffled, g_cond = conditioned_norm_backward(shuffled, timestamps, p.adaln, p.te, cfg, dnormed)
        grads.update(g_cond)
    else:
        dshuffled, _, _ = layer_norm_backward(shuffled, dnormed, eps=cfg.norm_eps)
    # PixelShuffle es una permutación: su reverso es la inversa
    return pixel_unshuffle(dshuffled, k), grads
