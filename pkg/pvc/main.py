import functools
import sys
from pathlib import Path
from typing import Optional, Tuple

import click
from loguru import logger

from pvc.config import get_settings
from pvc.errors import CheckFailure, ConfigError, ShapeError
from pvc.models.schemas import InputConfig, PvcConfig
from pvc.models.tensors import VideoBatch
from pvc.services.adaptive_compression import AdaptiveCompressor
from pvc.services.budget import BudgetAnalyzer, compare_strategies, estimate_flops, relative_delta
from pvc.services.input_pipeline import InputStandardizer, StandardizedInput, read_frame_stack, read_ppm
from pvc.services.model_store import init_model, load_model, preset_config, save_model
from pvc.services.progressive_vit import ProgressiveViT
from pvc.services.verification import GRAD_MODULES, check_causality, check_init_identity, run_grad_check
from pvc.presets import MODEL_PRESETS
from pvc.utils.pvct import load_bundle, save_bundle

settings = get_settings()

LOG_FORMAT = "{time:YYYY-MM-DD HH:mm:ss} | {level: <8} | {name}:{function}:{line} - {message}"


class IoFailure(click.ClickException):
    exit_code = 3


def setup_logging(level: Optional[str] = None):
    logger.remove()
    logger.add(sys.stderr, format=LOG_FORMAT, level=level or settings.PVC_LOG_LEVEL)
    if settings.PVC_LOG_FILE:
        logger.add(
            settings.PVC_LOG_FILE,
            format=LOG_FORMAT,
            level="DEBUG",
            rotation="500 MB",
            retention="30 days"
        )


def exit_codes(fn):
    """Verificación fallida -> 1, valor inválido -> 2, archivos o manifiestos -> 3."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except CheckFailure as e:
            logger.error(str(e))
            sys.exit(1)
        except (OSError, ConfigError, ShapeError) as e:
            logger.error(f"Error de E/S: {e}")
            raise IoFailure(str(e)) from e
        except ValueError as e:
            raise click.UsageError(str(e)) from e
    return wrapper


def emit(text: str, out: Optional[Path] = None):
    click.echo(text)
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text + "\n", encoding="utf-8")


def finish_check(report, name: str, out: Optional[Path] = None):
    emit(report.to_text(), out)
    if not report.passed:
        raise CheckFailure(f"{name}: la verificación no pasó", report)


def load_input(path: Path, standardizer: InputStandardizer) -> StandardizedInput:
    if path.suffix.lower() == ".ppm":
        return standardizer.standardize_image(read_ppm(path))
    if path.suffix.lower() == ".pvct":
        return standardizer.standardize_video(read_frame_stack(path))
    raise click.BadParameter(f"formato no soportado: {path.suffix} (usar .ppm o .pvct)", param_hint="--input")


seed_option = click.option("--seed", type=int, default=lambda: get_settings().PVC_SEED, show_default="PVC_SEED")
preset_option = click.option(
    "--preset", "model_preset", type=click.Choice(sorted(MODEL_PRESETS)),
    default=lambda: get_settings().PVC_MODEL_PRESET, show_default="PVC_MODEL_PRESET",
)


@click.group(help=settings.APP_DESCRIPTION)
@click.version_option(settings.APP_VERSION, prog_name=settings.APP_TITLE)
@click.option("--log-level", default=None, help="Nivel de log en stderr (por defecto PVC_LOG_LEVEL)")
def cli(log_level: Optional[str]):
    setup_logging(log_level)


@cli.command("init")
@preset_option
@seed_option
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--baseline-compression", is_flag=True, help="PixelShuffle + MLP sin AdaLN/TE")
@exit_codes
def init_cmd(model_preset: str, seed: int, out: Path, baseline_compression: bool):
    """Escribe un modelo inicializado con semilla (manifiesto + PVCT)."""
    cfg = preset_config(model_preset)
    params = init_model(cfg, seed, adaptive=not baseline_compression)
    path = save_model(out, cfg, params, seed=seed)
    emit(f"manifest={path}\nparams={params.num_params()}")


@cli.command("forward")
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True)
@click.option("--input", "input_path", type=click.Path(path_type=Path), required=True)
@click.option("--t-img", type=int, default=None)
@click.option("--frames", type=int, default=None)
@click.option("--max-tiles", type=int, default=12, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@exit_codes
def forward_cmd(model_path: Path, input_path: Path, t_img: Optional[int], frames: Optional[int],
                max_tiles: int, out: Optional[Path]):
    """Codifica una imagen (.ppm) o pila de frames (.pvct) con el ViT progresivo."""
    cfg, params = load_model(model_path)
    input_cfg = InputConfig(
        tile_px=cfg.image_size, max_tiles=max_tiles, t_img=cfg.t_img if t_img is None else t_img, frames=frames
    )
    standardizer = InputStandardizer(input_cfg, cfg)
    batch = load_input(input_path, standardizer)
    vit = ProgressiveViT(cfg, params.stem, params.layers)
    encoded = vit.encode(batch.pixels, is_static=batch.is_static, timestamps=batch.timestamps)
    out = out or settings.PVC_RESULTS_DIR / "forward"
    manifest = save_bundle(
        out,
        {"features": encoded.features, "timestamps": encoded.timestamps},
        {"kind": "features", "is_static": encoded.is_static, "grid": list(batch.grid)},
        manifest_name="forward.yaml",
    )
    emit(f"features.shape={'x'.join(map(str, encoded.shape))}\nmanifest={manifest}")


@cli.command("compress")
@click.option("--model", "model_path", type=click.Path(path_type=Path), required=True)
@click.option("--features", "features_path", type=click.Path(path_type=Path), required=True,
              help="Manifiesto escrito por `forward`")
@click.option("--out", type=click.Path(path_type=Path), default=None)
@exit_codes
def compress_cmd(model_path: Path, features_path: Path, out: Optional[Path]):
    """Comprime features [B,T,N,C] a M = N/k^2 tokens por frame."""
    cfg, params = load_model(model_path)
    manifest, tensors = load_bundle(features_path)
    if "features" not in tensors or "timestamps" not in tensors:
        raise ConfigError(f"{features_path} no contiene features y timestamps")
    batch = VideoBatch(
        features=tensors["features"], timestamps=tensors["timestamps"], is_static=bool(manifest.get("is_static"))
    )
    tokens = AdaptiveCompressor(cfg, params.compression).compress(batch)
    out = out or settings.PVC_RESULTS_DIR / "compress"
    b, t, m, c_out = tokens.shape
    path = save_bundle(
        out,
        {"tokens": tokens, "timestamps": batch.timestamps},
        {"kind": "tokens", "batch": b, "frames": t, "tokens_per_frame": m, "out_dim": c_out,
         "is_static": batch.is_static, "adaptive": params.compression.adaptive},
        manifest_name="tokens.yaml",
    )
    emit(f"tokens.shape={'x'.join(map(str, tokens.shape))}\ntokens.per_frame={tokens.shape[2]}\nmanifest={path}")


@cli.command("check-causality")
@preset_option
@seed_option
@click.option("--frames", type=int, default=6, show_default=True)
@exit_codes
def check_causality_cmd(model_preset: str, seed: int, frames: int):
    """Perturba cada frame y verifica que las salidas anteriores no cambian."""
    finish_check(check_causality(preset_config(model_preset), seed, frames=frames), "check-causality")


@cli.command("check-init-identity")
@preset_option
@seed_option
@click.option("--frames", type=int, default=None)
@exit_codes
def check_init_identity_cmd(model_preset: str, seed: int, frames: Optional[int]):
    """Con alpha = 0 el stack progresivo es idéntico al ViT simple."""
    finish_check(check_init_identity(preset_config(model_preset), seed, frames=frames), "check-init-identity")


@cli.command("grad-check")
@click.option("--module", "module_id", type=click.Choice(GRAD_MODULES), required=True)
@seed_option
@click.option("--tol", type=float, default=None, help="Por defecto PVC_GRAD_TOL")
@click.option("--fd-step", type=float, default=None, help="Por defecto PVC_FD_STEP")
@click.option("--out", type=click.Path(path_type=Path), default=None)
@exit_codes
def grad_check_cmd(module_id: str, seed: int, tol: Optional[float], fd_step: Optional[float], out: Optional[Path]):
    """Backward analítico contra diferencias centrales."""
    finish_check(run_grad_check(module_id, seed, tol=tol, fd_step=fd_step), f"grad-check {module_id}", out)


@cli.command("budget")
@click.option("--preset", "presets", multiple=True, help="Preset de arquitectura + workload (repetible)")
@click.option("--spec", "specs", multiple=True, type=click.Path(path_type=Path),
              help="Archivo YAML plano con ArchSpec y workload.* (repetible)")
@click.option("--reuse/--no-reuse", default=True, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@exit_codes
def budget_cmd(presets: Tuple[str, ...], specs: Tuple[Path, ...], reuse: bool, out: Optional[Path]):
    """FLOPs analíticos por etapa; con dos o más reportes, tabla comparativa."""
    if not presets and not specs:
        raise click.UsageError("indicar al menos un --preset o --spec")
    analyzer = BudgetAnalyzer()
    reports = [analyzer.run_preset(name, reuse=reuse) for name in presets]
    for path in specs:
        arch, workload = analyzer.from_file(path)
        reports.append(estimate_flops(workload, arch, reuse=reuse, name=path.stem))
    if len(reports) > 1:
        base = reports[0]
        reports = [base] + [r.model_copy(update={"delta_vs_baseline": relative_delta(r, base)}) for r in reports[1:]]
    sections = [r.to_text() for r in reports]
    if len(reports) > 1:
        sections.append(compare_strategies(reports).to_text())
    emit("\n\n".join(sections), out)


@cli.command("pipeline")
@click.option("--input", "input_path", type=click.Path(path_type=Path), required=True)
@preset_option
@click.option("--t-img", type=int, default=None)
@click.option("--frames", type=int, default=None)
@click.option("--max-tiles", type=int, default=12, show_default=True)
@click.option("--tile-px", type=int, default=None, help="Por defecto image_size del preset")
@click.option("--tile-videos", is_flag=True)
@click.option("--normalization", default="imagenet", show_default=True)
@click.option("--out", type=click.Path(path_type=Path), default=None)
@exit_codes
def pipeline_cmd(input_path: Path, model_preset: str, t_img: Optional[int], frames: Optional[int], max_tiles: int,
                 tile_px: Optional[int], tile_videos: bool, normalization: str, out: Optional[Path]):
    """Estandariza una imagen o video como video y reporta tiles, frames y tokens."""
    cfg: PvcConfig = preset_config(model_preset)
    input_cfg = InputConfig(
        tile_px=cfg.image_size if tile_px is None else tile_px, max_tiles=max_tiles,
        t_img=cfg.t_img if t_img is None else t_img,
        frames=frames, tile_videos=tile_videos, normalization=normalization,
    )
    batch = load_input(input_path, InputStandardizer(input_cfg, cfg))
    tiles, n_frames = batch.pixels.shape[:2]
    lines = [
        f"input.static={str(batch.is_static).lower()}",
        f"grid={batch.grid[0]}x{batch.grid[1]}",
        f"tiles={tiles}",
        f"frames={n_frames}",
        f"frame_indices={','.join(map(str, batch.frame_indices))}",
        f"pixels.shape={'x'.join(map(str, batch.pixels.shape))}",
        f"timestamps={','.join(f'{t:.6f}' for t in batch.timestamps)}",
    ]
    if input_cfg.tile_px == cfg.image_size:
        lines.append(f"tokens.per_frame={cfg.tokens_per_frame}")
        lines.append(f"tokens.visual={tiles * n_frames * cfg.tokens_per_frame}")
    if out is not None:
        save_bundle(
            out, {"pixels": batch.pixels, "timestamps": batch.timestamps},
            {"kind": "pixels", "is_static": batch.is_static, "grid": list(batch.grid),
             "frame_indices": [int(i) for i in batch.frame_indices]},
            manifest_name="pipeline.yaml",
        )
        lines.append(f"manifest={out / 'pipeline.yaml'}")
    emit("\n".join(lines))


def main():
    cli(prog_name=settings.APP_TITLE)


if __name__ == "__main__":
    main()
