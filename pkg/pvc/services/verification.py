"""
Verificación de mecanismos a escala de juguete: oráculo de diferencias
centrales, comparación con los backward analíticos y chequeos de causalidad,
identidad con compuerta nula y distinción de frames estáticos.
"""
from itertools import combinations
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from loguru import logger

from pvc.config import get_settings
from pvc.errors import NonFiniteError
from pvc.models.schemas import CheckReport, GradCheckEntry, GradCheckReport, PvcConfig
from pvc.models.tensors import (
    AdaLnParams,
    AttentionParams,
    CompressionParams,
    LayerParams,
    MlpParams,
    NormParams,
    ParamBundle,
    TemporalEmbeddingParams,
    VideoBatch,
)
from pvc.services import backward
from pvc.services.adaptive_compression import compress, init_compression
from pvc.services.conditioning import ada_ln, relative_timestamps, sinusoidal_embed, temporal_embedding
from pvc.services.progressive_vit import (
    ProgressiveViT,
    attention,
    patchify,
    progressive_layer_forward,
    vit_forward,
)
from pvc.utils.tensor_engine import Rng, Tensor

GRAD_MODULES = ("adaln", "temporal_embedding", "tmha_causal", "progressive_layer", "compression")

# Casos: B=1, T=3, N=4, C=8, 2 cabezas
CASE_FRAMES = 3
CASE_TOKENS = 4
CASE_CHANNELS = 8
CASE_HEADS = 2
CASE_TE_DIM = 8
CASE_STD = 0.3

# Denominador mínimo del error relativo por elemento
REL_ERROR_FLOOR = 1e-8
# Cota absoluta para gradientes nulos por construcción (ruido de FD ~1e-10)
ZERO_GRAD_ATOL = 1e-7


def finite_diff_grad(f: Callable[[Tensor], float], x: Tensor, h: Optional[float] = None) -> Tensor:
    """(f(x + h e_i) - f(x - h e_i)) / 2h para cada coordenada."""
    h = get_settings().PVC_FD_STEP if h is None else h
    if h <= 0:
        raise ValueError(f"el paso h debe ser > 0, recibido {h}")
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    for i in range(x.size):
        plus = x.copy()
        minus = x.copy()
        plus.reshape(-1)[i] += h
        minus.reshape(-1)[i] -= h
        f_plus, f_minus = float(f(plus)), float(f(minus))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError(f"f no finita al perturbar la coordenada {i}")
        flat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def case_config(**overrides) -> PvcConfig:
    """Configuración mínima: grilla 2x2 (N=4), C=8, k=2."""
    base = dict(
        image_size=2, patch_size=1, channels=CASE_CHANNELS, heads=CASE_HEADS, ffn_dim=16,
        layers=1, temporal_layers=1, shuffle_kernel=2, t_img=CASE_FRAMES, te_dim=CASE_TE_DIM,
        min_frames=1, max_frames=96,
    )
    return PvcConfig(**{**base, **overrides})


class GradCase:
    """
    Entradas, pesos y gradiente de salida fijos, más el forward y su reverso.

    `zero_grads` nombra los tensores cuyo gradiente es 0 por construcción
    (el sesgo de claves: softmax es invariante a un desplazamiento por fila).
    """

    def __init__(self, inputs: Dict[str, Tensor], params: ParamBundle, upstream: Tensor,
                 forward: Callable[[Dict[str, Tensor], ParamBundle], Tensor],
                 grads: Callable[[Dict[str, Tensor], ParamBundle, Tensor], Dict[str, Tensor]],
                 zero_grads: Sequence[str] = ()):
        self.inputs = inputs
        self.params = params
        self.upstream = upstream
        self.forward = forward
        self.grads = grads
        self.zero_grads = frozenset(zero_grads)

    def loss(self, inputs: Dict[str, Tensor], params: ParamBundle) -> float:
        return float(np.sum(self.forward(inputs, params) * self.upstream))

    def loss_wrt(self, name: str) -> Callable[[Tensor], float]:
        if name in self.inputs:
            return lambda value: self.loss({**self.inputs, name: value}, self.params)
        return lambda value: self.loss(self.inputs, self.params.replace(name, value))

    def tensors(self) -> Dict[str, Tensor]:
        return {**self.inputs, **self.params.as_dict()}

    def shapes(self) -> Dict[str, List[int]]:
        return {name: list(t.shape) for name, t in self.inputs.items()}


def _randn(rng: Rng, i: int, shape, std: float = CASE_STD) -> Tensor:
    return rng.child(i).normal(shape, std)


def _case_attention(rng: Rng, c: int) -> AttentionParams:
    names = ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo")
    return AttentionParams(**{
        n: _randn(rng, i, (c, c) if n.startswith("w") else (c,)) for i, n in enumerate(names)
    })


def _case_adaln(rng: Rng, d: int) -> AdaLnParams:
    return AdaLnParams(**{f"w{j}": _randn(rng, j, (d, d)) for j in range(3, 7)})


def _case_te(rng: Rng, d: int) -> TemporalEmbeddingParams:
    return TemporalEmbeddingParams(w1=_randn(rng, 0, (CASE_TE_DIM, d)), w2=_randn(rng, 1, (d, d)))


def _case_layer(rng: Rng, cfg: PvcConfig, alpha_std: float = CASE_STD) -> LayerParams:
    c, f = cfg.channels, cfg.ffn_dim
    return LayerParams(
        ln1=NormParams(gamma=1.0 + _randn(rng, 0, (c,)), beta=_randn(rng, 1, (c,))),
        smha=_case_attention(rng.child(2), c),
        ln2=NormParams(gamma=1.0 + _randn(rng, 3, (c,)), beta=_randn(rng, 4, (c,))),
        ffn=MlpParams(w_in=_randn(rng, 5, (c, f)), b_in=_randn(rng, 6, (f,)),
                      w_out=_randn(rng, 7, (f, c)), b_out=_randn(rng, 8, (c,))),
        tmha=_case_attention(rng.child(9), c),
        adaln=_case_adaln(rng.child(10), c),
        te=_case_te(rng.child(11), c),
        gate_alpha=rng.child(12).normal((c,), alpha_std),
    )


def _adaln_case(rng: Rng, cfg: PvcConfig) -> GradCase:
    shape = (1, CASE_FRAMES, CASE_TOKENS, CASE_CHANNELS)

    def grads(inputs, p, dout):
        dx, dz, g = backward.ada_ln_backward(inputs["x"], inputs["z"], p, dout, cfg.norm_eps)
        return {"x": dx, "z": dz, **g}

    return GradCase(
        inputs={"x": _randn(rng, 0, shape, 1.0), "z": _randn(rng, 1, shape, 1.0)},
        params=_case_adaln(rng.child(2), CASE_CHANNELS),
        upstream=_randn(rng, 3, shape, 1.0),
        forward=lambda inputs, p: ada_ln(inputs["x"], inputs["z"], p, cfg.norm_eps),
        grads=grads,
    )


def _te_case(rng: Rng, cfg: PvcConfig) -> GradCase:
    t_tilde = sinusoidal_embed(relative_timestamps(CASE_FRAMES), dim=CASE_TE_DIM, scale=cfg.ts_scale)

    def grads(inputs, p, dout):
        dt, g = backward.temporal_embedding_backward(inputs["t_tilde"], p, dout)
        return {"t_tilde": dt, **g}

    return GradCase(
        inputs={"t_tilde": t_tilde},
        params=_case_te(rng.child(0), CASE_CHANNELS),
        upstream=_randn(rng, 1, (CASE_FRAMES, CASE_CHANNELS), 1.0),
        forward=lambda inputs, p: temporal_embedding(inputs["t_tilde"], p),
        grads=grads,
    )


def _tmha_case(rng: Rng, cfg: PvcConfig) -> GradCase:
    shape = (CASE_TOKENS, CASE_FRAMES, CASE_CHANNELS)

    def grads(inputs, p, dout):
        cache: Dict[str, Tensor] = {}
        attention(inputs["x"], p, cfg.heads, causal=True, cache=cache)
        dx, g = backward.attention_backward(cache, p, cfg.heads, dout)
        return {"x": dx, **g}

    return GradCase(
        inputs={"x": _randn(rng, 0, shape, 1.0)},
        params=_case_attention(rng.child(1), CASE_CHANNELS),
        upstream=_randn(rng, 2, shape, 1.0),
        forward=lambda inputs, p: attention(inputs["x"], p, cfg.heads, causal=True),
        grads=grads,
        zero_grads=("bk",),
    )


def _layer_case(rng: Rng, cfg: PvcConfig) -> GradCase:
    shape = (1, CASE_FRAMES, CASE_TOKENS, CASE_CHANNELS)
    ts = relative_timestamps(CASE_FRAMES)

    def grads(inputs, p, dout):
        dx, g = backward.progressive_layer_backward(inputs["x"], ts, p, cfg, dout)
        return {"x": dx, **g}

    return GradCase(
        inputs={"x": _randn(rng, 0, shape, 1.0)},
        params=_case_layer(rng.child(1), cfg),
        upstream=_randn(rng, 2, shape, 1.0),
        forward=lambda inputs, p: progressive_layer_forward(
            VideoBatch(features=inputs["x"], timestamps=ts), p, cfg
        ).features,
        grads=grads,
        zero_grads=("smha.bk", "tmha.bk"),
    )


def _compression_case(rng: Rng, cfg: PvcConfig) -> GradCase:
    c = 4
    cfg = cfg.model_copy(update={"channels": c, "heads": 1})
    width, out = cfg.shuffle_width, c
    ts = relative_timestamps(CASE_FRAMES)
    params = CompressionParams(
        mlp=MlpParams(w_in=_randn(rng, 0, (width, width)), b_in=_randn(rng, 1, (width,)),
                      w_out=_randn(rng, 2, (width, out)), b_out=_randn(rng, 3, (out,))),
        adaln=_case_adaln(rng.child(4), width),
        te=_case_te(rng.child(5), width),
    )
    m = CASE_TOKENS // cfg.shuffle_kernel ** 2

    def grads(inputs, p, dout):
        dx, g = backward.compression_backward(inputs["x"], ts, p, cfg, dout)
        return {"x": dx, **g}

    return GradCase(
        inputs={"x": _randn(rng, 6, (1, CASE_FRAMES, CASE_TOKENS, c), 1.0)},
        params=params,
        upstream=_randn(rng, 7, (1, CASE_FRAMES, m, out), 1.0),
        forward=lambda inputs, p: compress(VideoBatch(features=inputs["x"], timestamps=ts), p, cfg),
        grads=grads,
    )


_CASES = {
    "adaln": _adaln_case,
    "temporal_embedding": _te_case,
    "tmha_causal": _tmha_case,
    "progressive_layer": _layer_case,
    "compression": _compression_case,
}


def build_case(module_id: str, seed: int, cfg: Optional[PvcConfig] = None) -> GradCase:
    if module_id not in _CASES:
        raise ValueError(f"módulo desconocido: {module_id} (disponibles: {', '.join(GRAD_MODULES)})")
    return _CASES[module_id](Rng(seed), cfg or case_config())


def compare_grads(analytic: Dict[str, Tensor], numeric: Dict[str, Tensor], tol: float,
                  zero_grads: Sequence[str] = ()) -> List[GradCheckEntry]:
    """
    Error relativo por elemento, |g_a - g_fd| / max(|g_fd|, 1e-8), tomando el
    máximo por tensor. Los tensores en `zero_grads` se comparan contra 0 con
    la cota absoluta max(|g_a|, |g_fd|) < ZERO_GRAD_ATOL.
    """
    entries = []
    for name, g_fd in numeric.items():
        g_a = analytic[name]
        if name in zero_grads:
            err = float(max(np.max(np.abs(g_a)), np.max(np.abs(g_fd))))
            entries.append(GradCheckEntry(name=name, shape=list(g_fd.shape), error=err,
                                          metric="absolute", passed=err < ZERO_GRAD_ATOL))
            continue
        rel = np.abs(g_a - g_fd) / np.maximum(np.abs(g_fd), REL_ERROR_FLOOR)
        err = float(np.max(rel))
        entries.append(GradCheckEntry(name=name, shape=list(g_fd.shape), error=err, passed=err < tol))
    return entries


def grad_check_case(case: GradCase, module_id: str, seed: int, tol: float, fd_step: float,
                     analytic: Optional[Dict[str, Tensor]] = None) -> GradCheckReport:
    if analytic is None:
        analytic = case.grads(case.inputs, case.params, case.upstream)
    numeric = {name: finite_diff_grad(case.loss_wrt(name), t, fd_step) for name, t in case.tensors().items()}
    return GradCheckReport(
        module_id=module_id, seed=seed, tol=tol, fd_step=fd_step,
        case_shapes=case.shapes(), entries=compare_grads(analytic, numeric, tol, case.zero_grads),
    )


def run_grad_check(module_id: str, seed: int, tol: Optional[float] = None,
                   fd_step: Optional[float] = None, cfg: Optional[PvcConfig] = None) -> GradCheckReport:
    """Backward analítico contra diferencias centrales en cada tensor del caso."""
    settings = get_settings()
    tol = settings.PVC_GRAD_TOL if tol is None else tol
    fd_step = settings.PVC_FD_STEP if fd_step is None else fd_step
    report = grad_check_case(build_case(module_id, seed, cfg), module_id, seed, tol, fd_step)
    log = logger.info if report.passed else logger.error
    log(f"grad-check {module_id}: max_rel_error={report.max_rel_error:.3e} (tol {tol:.1e})")
    return report


def with_random_gates(layers: Sequence[LayerParams], rng: Rng, std: float = 0.5) -> List[LayerParams]:
    """Compuertas alpha aleatorias no nulas en las capas temporales."""
    return [
        layer.replace("gate_alpha", rng.child(i).normal(layer.gate_alpha.shape, std)) if layer.is_temporal else layer
        for i, layer in enumerate(layers)
    ]


def check_causality(cfg: PvcConfig, seed: int, frames: int = 6, tol: float = 1e-12) -> CheckReport:
    """Perturbar el frame j no cambia ninguna salida (ViT y compresión) en t < j."""
    rng = Rng(seed)
    vit = ProgressiveViT.from_seed(cfg, seed)
    layers = with_random_gates(vit.layers, rng.child(10))
    comp = init_compression(rng.child(11), cfg)
    ts = relative_timestamps(frames)
    x = rng.child(12).normal((1, frames, cfg.num_patches, cfg.channels))

    def run(features: Tensor):
        out = vit_forward(VideoBatch(features=features, timestamps=ts), cfg, layers)
        return out.features, compress(out, comp, cfg)

    base_feat, base_tok = run(x)
    leak, influence = 0.0, np.inf
    for j in range(frames):
        perturbed = x.copy()
        perturbed[:, j] += rng.child(100 + j).normal(perturbed[:, j].shape)
        feat, tok = run(perturbed)
        leak = max(leak, float(np.max(np.abs(feat[:, :j] - base_feat[:, :j]), initial=0.0)),
                   float(np.max(np.abs(tok[:, :j] - base_tok[:, :j]), initial=0.0)))
        influence = min(influence, float(np.max(np.abs(feat[:, j:] - base_feat[:, j:]))))
        logger.debug(f"causalidad: frame {j} perturbado, fuga acumulada {leak:.3e}")

    passed = leak <= tol
    report = CheckReport(
        name="causality", passed=passed, seed=seed,
        metrics={"max_leak": leak, "min_influence": influence, "tol": tol},
        details=[f"frames={frames}", f"layers={cfg.layers}", f"temporal_layers={cfg.temporal_layers}"],
    )
    logger.info(f"check-causality semilla {seed}: {'ok' if passed else 'FALLA'} (fuga {leak:.3e})")
    return report


def check_init_identity(cfg: PvcConfig, seed: int, frames: Optional[int] = None, tol: float = 1e-15) -> CheckReport:
    """Con alpha = 0 el stack progresivo coincide con el ViT simple por frame."""
    frames = cfg.t_img if frames is None else frames
    vit = ProgressiveViT.from_seed(cfg, seed)
    pixels = Rng(seed).child(20).uniform((1, frames, cfg.image_size, cfg.image_size, 3), -1.0, 1.0)
    tokens = patchify(pixels, cfg, vit.stem)
    diff = float(np.max(np.abs(vit.forward(tokens).features - vit.forward_plain(tokens).features)))
    passed = diff <= tol
    logger.info(f"check-init-identity semilla {seed}: {'ok' if passed else 'FALLA'} (diff {diff:.3e})")
    return CheckReport(
        name="init_identity", passed=passed, seed=seed,
        metrics={"max_abs_diff": diff, "tol": tol},
        details=[f"frames={frames}", f"temporal_layers={cfg.temporal_layers}"],
    )


def _min_pairwise_l2(tokens: Tensor) -> float:
    frames = tokens.shape[1]
    return min(float(np.linalg.norm(tokens[:, a] - tokens[:, b])) for a, b in combinations(range(frames), 2))


def check_static_distinctness(cfg: PvcConfig, seed: int, frames: int = 4, min_distance: float = 1e-6) -> CheckReport:
    """
    Un video estático comprimido con condicionamiento aleatorio da frames
    distintos de a pares; con el embedding temporal en cero son idénticos bit a bit.
    """
    rng = Rng(seed)
    params = init_compression(rng.child(30), cfg)
    frame = rng.child(31).normal((1, 1, cfg.num_patches, cfg.channels))
    v = VideoBatch(features=np.repeat(frame, frames, axis=1), timestamps=relative_timestamps(frames), is_static=True)

    distinct = _min_pairwise_l2(compress(v, params, cfg))
    zeroed = params.model_copy(update={"te": params.te.map(lambda _, t: np.zeros_like(t))})
    same = compress(v, zeroed, cfg)
    identical = all(np.array_equal(same[:, 0], same[:, i]) for i in range(1, frames))

    passed = distinct > min_distance and identical
    return CheckReport(
        name="static_distinctness", passed=passed, seed=seed,
        metrics={"min_pairwise_l2": distinct, "zeroed_max_diff": float(np.max(np.abs(same - same[:, :1])))},
        details=[f"frames={frames}", f"zeroed_identical={str(identical).lower()}"],
    )


def check_gradient_causality(cfg: PvcConfig, seed: int, frames: int = 6) -> CheckReport:
    """Un gradiente de salida sólo en el frame t deja exactamente 0 en las entradas t' > t."""
    rng = Rng(seed)
    layers = with_random_gates(ProgressiveViT.from_seed(cfg, seed).layers, rng.child(40))
    v = VideoBatch(
        features=rng.child(41).normal((1, frames, cfg.num_patches, cfg.channels)),
        timestamps=relative_timestamps(frames),
    )
    leak = 0.0
    reach = np.inf
    for t in range(frames):
        dout = np.zeros_like(v.features)
        dout[:, t] = rng.child(50 + t).normal(dout[:, t].shape)
        dx, _ = backward.stack_backward(v, layers, cfg, dout)
        leak = max(leak, float(np.max(np.abs(dx[:, t + 1:]), initial=0.0)))
        reach = min(reach, float(np.max(np.abs(dx[:, :t + 1]))))
    passed = leak == 0.0
    logger.info(f"check-gradient-causality semilla {seed}: {'ok' if passed else 'FALLA'}")
    return CheckReport(
        name="gradient_causality", passed=passed, seed=seed,
        metrics={"max_future_grad": leak, "min_past_grad": reach},
        details=[f"frames={frames}"],
    )
