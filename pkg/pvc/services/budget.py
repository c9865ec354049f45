"""
Conteo de tokens y FLOPs analíticos para pilas (ViT, compresión, LLM), con
reutilización de las capas simples en frames estáticos repetidos.

Los costos se acumulan en multiply-accumulates (MACs) y se multiplican por
`ArchSpec.flops_per_mac` al reportar.
"""
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import yaml
from loguru import logger

from pvc.errors import ConfigError
from pvc.models.schemas import (
    STAGES,
    ArchSpec,
    BudgetReport,
    ComparisonRow,
    StrategyComparison,
    TokenCounts,
    WorkloadSpec,
)
from pvc.presets import ARCH_PRESETS, WORKLOAD_PRESETS


def attention_macs(seq: int, hidden: int) -> int:
    """Proyecciones QKVO (4 s d^2) más QK^T y AV (2 s^2 d)."""
    return 4 * seq * hidden * hidden + 2 * seq * seq * hidden


def ffn_macs(seq: int, hidden: int, ffn: int) -> int:
    return 2 * seq * hidden * ffn


def layer_macs(seq: int, hidden: int, ffn: int) -> int:
    return attention_macs(seq, hidden) + ffn_macs(seq, hidden, ffn)


def _or(value: Optional[int], default: int) -> int:
    return default if value is None else value


def frames_of(w: WorkloadSpec) -> int:
    return w.t_img if w.kind == "image" else w.frames


def count_tokens(w: WorkloadSpec, a: ArchSpec) -> TokenCounts:
    k2 = a.compression.k ** 2
    per_frame = a.vit.num_patches // k2
    frames = frames_of(w)
    return TokenCounts(
        tokens_per_frame=per_frame,
        frames=frames,
        tiles=w.tiles,
        visual=frames * w.tiles * per_frame,
        text=w.text_tokens,
    )


def _vit_stages(w: WorkloadSpec, a: ArchSpec, reuse: bool) -> Dict[str, int]:
    vit = a.vit
    n, d, f = vit.num_patches, vit.hidden, vit.ffn
    frames = frames_of(w)
    plain_layers = vit.layers - vit.temporal_layers
    stem = n * 3 * vit.patch ** 2 * d if vit.layers > 0 else 0

    # Las capas simples de un video estático son idénticas entre repeticiones
    copies = 1 if reuse and w.kind == "image" else frames
    plain = w.tiles * copies * (plain_layers * layer_macs(n, d, f) + stem)

    adaln_hidden = _or(vit.adaln_hidden, d)
    te_hidden = _or(vit.te_hidden, d)
    per_temporal_layer = w.tiles * (
        frames * layer_macs(n, d, f)
        + n * attention_macs(frames, d)
        + frames * n * 4 * d * adaln_hidden
    ) + frames * (vit.te_dim * te_hidden + te_hidden * d)
    return {"vit_plain": plain, "vit_temporal": vit.temporal_layers * per_temporal_layer}


def _compression_macs(w: WorkloadSpec, a: ArchSpec) -> int:
    comp, d = a.compression, a.vit.hidden
    width = comp.k ** 2 * d
    hidden = _or(comp.mlp_hidden, width)
    out = _or(comp.out_dim, d)
    counts = count_tokens(w, a)
    macs = counts.visual * (width * hidden + hidden * out)
    if comp.adaptive:
        adaln_hidden = _or(comp.adaln_hidden, width)
        te_hidden = _or(comp.te_hidden, width)
        macs += counts.visual * 4 * width * adaln_hidden
        macs += counts.frames * (a.vit.te_dim * te_hidden + te_hidden * width)
    return macs


def _llm_macs(w: WorkloadSpec, a: ArchSpec) -> int:
    llm = a.llm
    seq = count_tokens(w, a).total
    return llm.layers * layer_macs(seq, llm.hidden, llm.ffn)


def estimate_flops(w: WorkloadSpec, a: ArchSpec, reuse: bool = False, name: Optional[str] = None) -> BudgetReport:
    counts = count_tokens(w, a)
    macs = _vit_stages(w, a, reuse)
    macs["compression"] = _compression_macs(w, a)
    macs["llm_prefill"] = _llm_macs(w, a)
    stages = {stage: float(macs[stage] * a.flops_per_mac) for stage in STAGES}
    report = BudgetReport(
        name=name or a.name,
        workload=w,
        reuse=reuse,
        visual_tokens=counts.visual,
        text_tokens=counts.text,
        tokens_per_frame=counts.tokens_per_frame,
        stages=stages,
        total=float(sum(macs.values()) * a.flops_per_mac),
    )
    logger.debug(f"Presupuesto {report.name}: {report.total / 1e12:.3f} TFLOPs")
    return report


def relative_delta(report: BudgetReport, baseline: BudgetReport) -> float:
    if baseline.total == 0:
        raise ValueError("el reporte base tiene 0 FLOPs")
    return report.total / baseline.total - 1.0


def _rel(value: float, base: float) -> Optional[float]:
    if base == 0:
        return 0.0 if value == 0 else None
    return value / base - 1.0


def compare_strategies(reports: Sequence[BudgetReport]) -> StrategyComparison:
    """Tabla alineada por etapa con deltas absolutos y relativos contra el primer reporte."""
    if len(reports) < 2:
        raise ValueError("se necesitan al menos 2 reportes para comparar")
    base = reports[0]
    for r in reports[1:]:
        if not r.workload.same_input(base.workload):
            raise ValueError(f"workload de {r.name} no coincide con el de {base.name}")
    rows = []
    for r in reports:
        keys = list(STAGES)
        abs_delta = {s: r.stages[s] - base.stages[s] for s in keys}
        abs_delta["total"] = r.total - base.total
        rel_delta = {s: _rel(r.stages[s], base.stages[s]) for s in keys}
        rel_delta["total"] = _rel(r.total, base.total)
        rows.append(ComparisonRow(name=r.name, stages=r.stages, total=r.total,
                                  abs_delta=abs_delta, rel_delta=rel_delta))
    return StrategyComparison(baseline=base.name, rows=rows)


def equivalent_repeats(k: int, baseline_ratio: int) -> int:
    """Repeticiones que igualan los tokens por imagen de una base con razón `baseline_ratio`."""
    if (k * k) % baseline_ratio:
        raise ValueError(f"k^2={k * k} no es múltiplo de la razón base {baseline_ratio}")
    return k * k // baseline_ratio


def _unflatten(data: Dict[str, Any]) -> Dict[str, Any]:
    out: Dict[str, Any] = {}
    for key, value in data.items():
        node = out
        *parents, leaf = str(key).split(".")
        for part in parents:
            node = node.setdefault(part, {})
        if isinstance(value, dict):
            node.setdefault(leaf, {}).update(_unflatten(value))
        else:
            node[leaf] = value
    return out


def load_spec_file(path: Union[str, Path]) -> Dict[str, Any]:
    """Archivo plano (YAML, claves con puntos) con campos de ArchSpec y `workload.*`."""
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path} no es un mapa de claves")
    return _unflatten(data)


class BudgetAnalyzer:
    def __init__(self):
        self.arch_presets = ARCH_PRESETS
        self.workload_presets = WORKLOAD_PRESETS

    def preset(self, name: str) -> ArchSpec:
        if name not in self.arch_presets:
            raise ConfigError(f"preset desconocido: {name} (disponibles: {', '.join(self.arch_presets)})")
        return ArchSpec(**self.arch_presets[name])

    def preset_workload(self, name: str) -> WorkloadSpec:
        return WorkloadSpec(**self.workload_presets.get(name, {}))

    def from_file(self, path: Union[str, Path]) -> Tuple[ArchSpec, WorkloadSpec]:
        data = load_spec_file(path)
        workload = WorkloadSpec(**data.pop("workload", {}))
        return ArchSpec(**data), workload

    def run_preset(self, name: str, reuse: bool = True) -> BudgetReport:
        return estimate_flops(self.preset_workload(name), self.preset(name), reuse=reuse, name=name)

    def table4(self, reuse: bool = True) -> List[BudgetReport]:
        baseline = self.run_preset("table4-baseline", reuse=reuse)
        pvc = self.run_preset("table4-pvc", reuse=reuse)
        pvc = pvc.model_copy(update={"delta_vs_baseline": relative_delta(pvc, baseline)})
        logger.info(f"Tabla de costos: base {baseline.total / 1e12:.2f}T, PVC {pvc.total / 1e12:.2f}T")
        return [baseline, pvc]
