from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, Field, model_validator

from pvc.config import get_settings

AdaLnCondition = Literal["x_te", "te", "none"]

# Etapas del presupuesto, en orden de reporte
STAGES = ("vit_plain", "vit_temporal", "compression", "llm_prefill")


class PvcConfig(BaseModel):
    image_size: int = Field(default=448, gt=0, description="Lado de cada tile en px")
    patch_size: int = Field(default=14, gt=0)
    channels: int = Field(default=1024, gt=0, description="Ancho C del ViT")
    heads: int = Field(default=16, gt=0)
    ffn_dim: int = Field(default=4096, gt=0)
    layers: int = Field(default=24, ge=0, description="L")
    temporal_layers: int = Field(default=8, ge=0, description="L~, últimas capas con T-MHA")
    shuffle_kernel: int = Field(default=4, gt=0, description="k del PixelShuffle")
    t_img: int = Field(default=4, gt=0)
    min_frames: int = Field(default=16, gt=0)
    max_frames: int = Field(default=96, gt=0)
    ts_scale: float = Field(default_factory=lambda: get_settings().PVC_TS_SCALE)
    te_dim: int = Field(default=256, gt=0, description="Ancho del embedding sinusoidal")
    compress_hidden: Optional[int] = Field(default=None, gt=0, description="F; por defecto 16*C")
    compress_out: Optional[int] = Field(default=None, gt=0, description="C_out; por defecto C")
    adaln_condition: AdaLnCondition = "x_te"
    init_std: float = Field(default_factory=lambda: get_settings().PVC_INIT_STD)
    norm_eps: float = Field(default_factory=lambda: get_settings().PVC_NORM_EPS)

    @model_validator(mode="after")
    def check_geometry(self):
        if self.image_size % self.patch_size:
            raise ValueError(f"image_size {self.image_size} no es divisible por patch_size {self.patch_size}")
        if self.channels % self.heads:
            raise ValueError(f"C={self.channels} no es divisible por heads={self.heads}")
        if self.temporal_layers > self.layers:
            raise ValueError(f"L~={self.temporal_layers} > L={self.layers}")
        if self.grid % self.shuffle_kernel:
            raise ValueError(f"k={self.shuffle_kernel} no divide la grilla {self.grid}x{self.grid}")
        if self.min_frames > self.max_frames:
            raise ValueError("min_frames > max_frames")
        if self.te_dim % 2:
            raise ValueError("te_dim debe ser par (bloque seno + bloque coseno)")
        return self

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def num_patches(self) -> int:
        return self.grid ** 2

    @property
    def tokens_per_frame(self) -> int:
        return self.num_patches // self.shuffle_kernel ** 2

    @property
    def shuffle_width(self) -> int:
        return self.shuffle_kernel ** 2 * self.channels

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    @property
    def plain_layers(self) -> int:
        return self.layers - self.temporal_layers

    @property
    def mlp_hidden(self) -> int:
        return self.compress_hidden or self.shuffle_width

    @property
    def out_dim(self) -> int:
        return self.compress_out or self.channels


class InputConfig(BaseModel):
    tile_px: int = Field(default=448, gt=0)
    max_tiles: int = Field(default=12, ge=1)
    t_img: int = Field(default=4, ge=1)
    frames: Optional[int] = Field(default=None, ge=1, description="T para videos nativos")
    tile_videos: bool = Field(default=False, description="Resolución dinámica en cada frame de video")
    normalization: str = "imagenet"


class CheckReport(BaseModel):
    name: str
    passed: bool
    seed: int
    metrics: Dict[str, float] = Field(default_factory=dict)
    details: List[str] = Field(default_factory=list)

    def to_text(self) -> str:
        lines = [f"check={self.name}", f"seed={self.seed}", f"passed={str(self.passed).lower()}"]
        lines += [f"{k}={v:.6e}" for k, v in self.metrics.items()]
        lines += [f"detail={d}" for d in self.details]
        return "\n".join(lines)


class GradCheckEntry(BaseModel):
    name: str
    shape: List[int]
    error: float
    metric: Literal["relative", "absolute"] = Field(
        default="relative", description="absolute para gradientes estructuralmente nulos"
    )
    passed: bool


class GradCheckReport(BaseModel):
    module_id: str
    seed: int
    tol: float
    fd_step: float
    case_shapes: Dict[str, List[int]] = Field(default_factory=dict)
    entries: List[GradCheckEntry] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_rel_error(self) -> float:
        return max((e.error for e in self.entries if e.metric == "relative"), default=0.0)

    @property
    def max_abs_zero_grad(self) -> float:
        return max((e.error for e in self.entries if e.metric == "absolute"), default=0.0)

    def to_text(self) -> str:
        lines = [
            f"module={self.module_id}",
            f"seed={self.seed}",
            f"tol={self.tol:.3e}",
            f"fd_step={self.fd_step:.3e}",
        ]
        lines += [f"case.{k}={'x'.join(map(str, v))}" for k, v in self.case_shapes.items()]
        for e in self.entries:
            lines.append(
                f"grad.{e.name}={e.error:.6e} shape={'x'.join(map(str, e.shape))} "
                f"{e.metric} {'pass' if e.passed else 'fail'}"
            )
        lines.append(f"max_rel_error={self.max_rel_error:.6e}")
        if any(e.metric == "absolute" for e in self.entries):
            lines.append(f"max_abs_zero_grad={self.max_abs_zero_grad:.6e}")
        lines.append(f"passed={str(self.passed).lower()}")
        return "\n".join(lines)


class WorkloadSpec(BaseModel):
    kind: Literal["image", "video"] = "image"
    t_img: int = Field(default=4, gt=0)
    tiles: int = Field(default=1, gt=0)
    frames: Optional[int] = Field(default=None, gt=0, description="T para kind=video")
    text_tokens: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def check_kind(self):
        if self.kind == "video" and self.frames is None:
            raise ValueError("un workload de video necesita frames > 0")
        return self

    def same_input(self, other: "WorkloadSpec") -> bool:
        """Misma entrada descrita; t_img es parte de la estrategia, no de la entrada."""
        return (self.kind, self.tiles, self.frames, self.text_tokens) == (
            other.kind, other.tiles, other.frames, other.text_tokens
        )


class VitSpec(BaseModel):
    layers: int = Field(default=24, ge=0)
    temporal_layers: int = Field(default=0, ge=0)
    hidden: int = Field(default=1024, ge=0)
    heads: int = Field(default=16, gt=0)
    ffn: int = Field(default=4096, ge=0)
    patch: int = Field(default=14, gt=0)
    image_size: int = Field(default=448, gt=0)
    adaln_hidden: Optional[int] = Field(default=None, ge=0)
    te_hidden: Optional[int] = Field(default=None, ge=0)
    te_dim: int = 256

    @model_validator(mode="after")
    def check_vit(self):
        if self.temporal_layers > self.layers:
            raise ValueError("temporal_layers > layers")
        if self.image_size % self.patch:
            raise ValueError("image_size no divisible por patch")
        return self

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch) ** 2


class CompressionSpec(BaseModel):
    k: int = Field(default=4, gt=0)
    mlp_hidden: Optional[int] = Field(default=None, ge=0, description="F; por defecto k^2*C")
    out_dim: Optional[int] = Field(default=None, ge=0, description="C_out; por defecto C")
    adaptive: bool = True
    adaln_hidden: Optional[int] = Field(default=None, ge=0)
    te_hidden: Optional[int] = Field(default=None, ge=0)


class LlmSpec(BaseModel):
    layers: int = Field(default=32, ge=0)
    hidden: int = Field(default=4096, ge=0)
    ffn: int = Field(default=11008, ge=0)
    heads: int = Field(default=32, gt=0)


class ArchSpec(BaseModel):
    name: str = "custom"
    vit: VitSpec = Field(default_factory=VitSpec)
    compression: CompressionSpec = Field(default_factory=CompressionSpec)
    llm: LlmSpec = Field(default_factory=LlmSpec)
    flops_per_mac: int = Field(default=2, gt=0)
    notes: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_shuffle(self):
        if self.vit.num_patches % self.compression.k ** 2:
            raise ValueError(f"k^2={self.compression.k ** 2} no divide N={self.vit.num_patches}")
        return self


class BudgetReport(BaseModel):
    name: str
    workload: WorkloadSpec
    reuse: bool = False
    visual_tokens: int
    text_tokens: int
    tokens_per_frame: int
    stages: Dict[str, float]
    total: float
    delta_vs_baseline: Optional[float] = None

    def to_text(self) -> str:
        lines = [
            f"report={self.name}",
            f"workload.kind={self.workload.kind}",
            f"reuse={str(self.reuse).lower()}",
            f"tokens.per_frame={self.tokens_per_frame}",
            f"tokens.visual={self.visual_tokens}",
            f"tokens.text={self.text_tokens}",
        ]
        lines += [f"flops.{stage}={self.stages[stage]:.6e}" for stage in STAGES]
        lines.append(f"flops.total={self.total:.6e}")
        lines.append(f"tflops.total={self.total / 1e12:.3f}")
        if self.delta_vs_baseline is not None:
            lines.append(f"delta.relative={self.delta_vs_baseline:+.4f}")
        return "\n".join(lines)


class TokenCounts(BaseModel):
    tokens_per_frame: int
    frames: int
    tiles: int
    visual: int
    text: int

    @property
    def total(self) -> int:
        return self.visual + self.text


class ComparisonRow(BaseModel):
    name: str
    stages: Dict[str, float]
    total: float
    abs_delta: Dict[str, float]
    rel_delta: Dict[str, Optional[float]]


class StrategyComparison(BaseModel):
    baseline: str
    rows: List[ComparisonRow]

    def to_text(self) -> str:
        header = f"{'strategy':<20}" + "".join(f"{s:>16}" for s in STAGES + ("total",))
        lines = [header, "-" * len(header)]
        for row in self.rows:
            values = [row.stages[s] for s in STAGES] + [row.total]
            lines.append(f"{row.name:<20}" + "".join(f"{v / 1e12:>15.3f}T" for v in values))
            rel = [row.rel_delta.get(s) for s in STAGES + ("total",)]
            lines.append(f"{'  delta':<20}" + "".join(
                f"{'-':>16}" if r is None else f"{r * 100:>+15.2f}%" for r in rel
            ))
        for row in self.rows:
            for key, value in row.rel_delta.items():
                if value is not None:
                    lines.append(f"delta.{row.name}.{key}={value:+.6f}")
        return "\n".join(lines)
