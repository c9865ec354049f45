"""
ViT con codificación progresiva: stem de patches, capas ViT simples y, en las
últimas L~ capas, el bloque con T-MHA causal, AdaLN, embedding temporal y
compuerta alpha inicializada en cero.
"""
from typing import Dict, List, Optional, Sequence

import numpy as np
from loguru import logger

from pvc.errors import ConfigError, ShapeError
from pvc.models.schemas import PvcConfig
from pvc.models.tensors import (
    AttentionParams,
    LayerParams,
    MlpParams,
    ModelParams,
    NormParams,
    PatchEmbedParams,
    VideoBatch,
)
from pvc.services.conditioning import (
    ada_ln,
    build_condition,
    frame_embedding,
    init_adaln,
    init_temporal_embedding,
    relative_timestamps,
)
from pvc.utils.tensor_engine import (
    Rng,
    Tensor,
    check_finite,
    gelu,
    layer_norm,
    linear,
    reshape_permute,
    softmax,
)

# [B,T,N,C] <-> [B,N,T,C]
TIME_MAJOR = (0, 2, 1, 3)


def causal_mask(length: int) -> Tensor:
    """True en las posiciones futuras (columna > fila)."""
    return np.triu(np.ones((length, length), dtype=bool), k=1)


def split_heads(x: Tensor, heads: int) -> Tensor:
    s, length, c = x.shape
    return reshape_permute(x, (s, length, heads, c // heads), None).transpose(0, 2, 1, 3)


def merge_heads(x: Tensor) -> Tensor:
    s, heads, length, d = x.shape
    return reshape_permute(x, (s, length, heads * d), (0, 2, 1, 3))


def attention(x: Tensor, p: AttentionParams, heads: int, causal: bool = False,
              cache: Optional[Dict[str, Tensor]] = None) -> Tensor:
    """
    Auto-atención multi-cabeza sobre [S, L, C]: cada una de las S secuencias
    se atiende de forma independiente. Si `cache` es un dict se guardan los
    intermedios que necesita el backward.
    """
    if x.ndim != 3:
        raise ShapeError(f"attention espera [S, L, C], recibió {x.shape}")
    c = x.shape[-1]
    if c % heads:
        raise ShapeError(f"C={c} no divisible por {heads} cabezas")
    q = split_heads(linear(x, p.wq, p.bq), heads)
    k = split_heads(linear(x, p.wk, p.bk), heads)
    v = split_heads(linear(x, p.wv, p.bv), heads)
    scores = np.matmul(q, k.transpose(0, 1, 3, 2)) / np.sqrt(c // heads)
    mask = causal_mask(x.shape[1]) if causal else None
    probs = softmax(scores, axis=-1, mask=mask)
    context = merge_heads(np.matmul(probs, v))
    out = linear(context, p.wo, p.bo)
    if cache is not None:
        cache.update(x=x, q=q, k=k, v=v, probs=probs, context=context)
    return out


def spatial_mha(x: Tensor, p: AttentionParams, heads: int) -> Tensor:
    """S-MHA sobre [B*T, N, C]: atención entre los patches de cada frame."""
    return attention(x, p, heads, causal=False)


def temporal_mha_causal(x: Tensor, p: AttentionParams, heads: int) -> Tensor:
    """T-MHA sobre [B*N, T, C]: cada posición espacial atiende a sus frames <= t."""
    return attention(x, p, heads, causal=True)


def ffn(x: Tensor, p: MlpParams) -> Tensor:
    return linear(gelu(linear(x, p.w_in, p.b_in)), p.w_out, p.b_out)


def to_frames(x: Tensor) -> Tensor:
    """[B,T,N,C] -> [B*T, N, C]"""
    b, t, n, c = x.shape
    return reshape_permute(x, (b * t, n, c))


def from_frames(x: Tensor, b: int, t: int) -> Tensor:
    return reshape_permute(x, (b, t) + x.shape[1:])


def to_tracks(x: Tensor) -> Tensor:
    """[B,T,N,C] -> [B*N, T, C]"""
    b, t, n, c = x.shape
    return reshape_permute(x, (b * n, t, c), TIME_MAJOR)


def from_tracks(x: Tensor, b: int, n: int) -> Tensor:
    _, t, c = x.shape
    return reshape_permute(reshape_permute(x, (b, n, t, c)), None, TIME_MAJOR)


def spatial_step(x: Tensor, p: LayerParams, cfg: PvcConfig) -> Tensor:
    b, t = x.shape[:2]
    h = layer_norm(x, -1, p.ln1.gamma, p.ln1.beta, cfg.norm_eps)
    return x + from_frames(spatial_mha(to_frames(h), p.smha, cfg.heads), b, t)


def temporal_branch(x: Tensor, timestamps: Tensor, p: LayerParams, cfg: PvcConfig) -> Tensor:
    """T-MHA(AdaLN(x; x+TE)) en [B,T,N,C], antes de la compuerta."""
    b, _, n, _ = x.shape
    te = frame_embedding(timestamps, p.te, cfg.ts_scale)
    z = build_condition(x, te, cfg.adaln_condition)
    a = ada_ln(x, z, p.adaln, cfg.norm_eps)
    return from_tracks(temporal_mha_causal(to_tracks(a), p.tmha, cfg.heads), b, n)


def ffn_step(x: Tensor, p: LayerParams, cfg: PvcConfig) -> Tensor:
    h = layer_norm(x, -1, p.ln2.gamma, p.ln2.beta, cfg.norm_eps)
    return x + ffn(h, p.ffn)


def progressive_layer_forward(v: VideoBatch, p: LayerParams, cfg: PvcConfig) -> VideoBatch:
    x = v.features
    if x.shape[-1] != cfg.channels:
        raise ShapeError(f"ancho {x.shape[-1]} != C={cfg.channels}")
    x = spatial_step(x, p, cfg)
    if p.is_temporal:
        x = x + p.gate_alpha * temporal_branch(x, v.timestamps, p, cfg)
    x = ffn_step(x, p, cfg)
    return v.with_features(check_finite(x, "progressive_layer_forward"))


def check_stack(cfg: PvcConfig, layers: Sequence[LayerParams]) -> None:
    if len(layers) != cfg.layers:
        raise ConfigError(f"{len(layers)} capas de pesos para L={cfg.layers}")
    for i, layer in enumerate(layers):
        expected = i >= cfg.plain_layers
        if layer.is_temporal != expected:
            kind = "progresiva" if expected else "simple"
            raise ConfigError(f"la capa {i} debería ser {kind}")


def vit_forward(v: VideoBatch, cfg: PvcConfig, layers: Sequence[LayerParams]) -> VideoBatch:
    check_stack(cfg, layers)
    for i, layer in enumerate(layers):
        v = progressive_layer_forward(v, layer, cfg)
        logger.debug(f"Capa {i} ({'temporal' if layer.is_temporal else 'simple'}) aplicada")
    return v


def plain_forward(v: VideoBatch, cfg: PvcConfig, layers: Sequence[LayerParams]) -> VideoBatch:
    """La misma pila con todas las capas tratadas como ViT simple."""
    for layer in layers:
        v = progressive_layer_forward(v, layer.plain(), cfg)
    return v


def patchify(frames: Tensor, cfg: PvcConfig, stem: PatchEmbedParams,
             timestamps: Optional[Tensor] = None, is_static: bool = False) -> VideoBatch:
    """Píxeles [B,T,H,W,3] -> tokens [B,T,N,C] con embedding de posición compartido entre frames."""
    if frames.ndim != 5 or frames.shape[-1] != 3:
        raise ShapeError(f"patchify espera [B,T,H,W,3], recibió {frames.shape}")
    b, t, h, w, _ = frames.shape
    ps = cfg.patch_size
    if h % ps or w % ps:
        raise ShapeError(f"{h}x{w} no es divisible por el patch {ps}")
    if h != cfg.image_size or w != cfg.image_size:
        raise ShapeError(f"se esperaban tiles de {cfg.image_size}px, recibido {h}x{w}")
    if is_static and t > 1 and not all(np.array_equal(frames[:, 0], frames[:, i]) for i in range(1, t)):
        raise ValueError("is_static declarado pero los frames difieren")
    g = h // ps
    patches = reshape_permute(
        frames.reshape(b, t, g, ps, g, ps, 3), (b, t, g * g, ps * ps * 3), (0, 1, 2, 4, 3, 5, 6)
    )
    tokens = linear(patches, stem.weight, stem.bias) + stem.pos
    timestamps = relative_timestamps(t) if timestamps is None else timestamps
    return VideoBatch(features=tokens, timestamps=timestamps, is_static=is_static)


def init_attention(rng: Rng, channels: int, std: float) -> AttentionParams:
    z = np.zeros(channels)
    return AttentionParams(
        wq=rng.child(0).normal((channels, channels), std),
        wk=rng.child(1).normal((channels, channels), std),
        wv=rng.child(2).normal((channels, channels), std),
        wo=rng.child(3).normal((channels, channels), std),
        bq=z, bk=z.copy(), bv=z.copy(), bo=z.copy(),
    )


def init_layer(rng: Rng, cfg: PvcConfig, temporal: bool) -> LayerParams:
    c, std = cfg.channels, cfg.init_std
    parts = dict(
        ln1=NormParams(gamma=np.ones(c), beta=np.zeros(c)),
        smha=init_attention(rng.child(0), c, std),
        ln2=NormParams(gamma=np.ones(c), beta=np.zeros(c)),
        ffn=MlpParams(
            w_in=rng.child(1).normal((c, cfg.ffn_dim), std),
            b_in=np.zeros(cfg.ffn_dim),
            w_out=rng.child(2).normal((cfg.ffn_dim, c), std),
            b_out=np.zeros(c),
        ),
    )
    if temporal:
        parts.update(
            tmha=init_attention(rng.child(3), c, std),
            adaln=init_adaln(rng.child(4), c, std=std),
            te=init_temporal_embedding(rng.child(5), c, te_dim=cfg.te_dim, std=std),
            gate_alpha=np.zeros(c),
        )
    return LayerParams(**parts)


def init_stem(rng: Rng, cfg: PvcConfig) -> PatchEmbedParams:
    return PatchEmbedParams(
        weight=rng.child(0).normal((cfg.patch_size ** 2 * 3, cfg.channels), cfg.init_std),
        bias=np.zeros(cfg.channels),
        pos=rng.child(1).normal((cfg.num_patches, cfg.channels), cfg.init_std),
    )


def init_layers(rng: Rng, cfg: PvcConfig) -> List[LayerParams]:
    return [init_layer(rng.child(i), cfg, temporal=i >= cfg.plain_layers) for i in range(cfg.layers)]


def added_params_per_layer(cfg: PvcConfig) -> int:
    """Parámetros que suma una capa progresiva: tmha + adaln + te + gate."""
    c, h = cfg.channels, cfg.channels
    return (4 * c * c + 4 * c) + 4 * c * h + (cfg.te_dim * h + h * c) + c


class ProgressiveViT:
    def __init__(self, cfg: PvcConfig, stem: PatchEmbedParams, layers: List[LayerParams]):
        check_stack(cfg, layers)
        self.cfg = cfg
        self.stem = stem
        self.layers = layers

    @classmethod
    def from_seed(cls, cfg: PvcConfig, seed: int) -> "ProgressiveViT":
        rng = Rng(seed)
        return cls(cfg, init_stem(rng.child(0), cfg), init_layers(rng.child(1), cfg))

    def added_params(self) -> int:
        plain = [layer.plain().num_params() for layer in self.layers]
        return sum(layer.num_params() for layer in self.layers) - sum(plain)

    def encode(self, pixels: Tensor, is_static: bool = False, timestamps: Optional[Tensor] = None,
               reuse: bool = True) -> VideoBatch:
        v = patchify(pixels, self.cfg, self.stem, timestamps=timestamps, is_static=is_static)
        logger.debug(f"Patchify: {v.shape}")
        if reuse and v.is_static and v.shape[1] > 1:
            return self.forward_reused(v)
        return self.forward(v)

    def forward(self, v: VideoBatch) -> VideoBatch:
        return vit_forward(v, self.cfg, self.layers)

    def forward_reused(self, v: VideoBatch) -> VideoBatch:
        """
        Video estático: las capas simples corren sobre un solo frame y el
        resultado se replica; solo las capas temporales ven las T repeticiones.
        """
        if not v.is_static:
            raise ValueError("forward_reused requiere una entrada estática")
        t = v.shape[1]
        plain = self.cfg.plain_layers
        head = VideoBatch(features=v.features[:, :1], timestamps=v.timestamps[:1], is_static=True)
        for layer in self.layers[:plain]:
            head = progressive_layer_forward(head, layer, self.cfg)
        out = v.with_features(np.repeat(head.features, t, axis=1))
        for layer in self.layers[plain:]:
            out = progressive_layer_forward(out, layer, self.cfg)
        logger.debug(f"Capas simples calculadas una vez para {t} repeticiones")
        return out

    def forward_plain(self, v: VideoBatch) -> VideoBatch:
        return plain_forward(v, self.cfg, self.layers)
