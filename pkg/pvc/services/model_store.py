"""Inicialización con semilla y persistencia de modelos (manifiesto YAML + un PVCT por tensor)."""
from pathlib import Path
from typing import Optional, Tuple, Union

from loguru import logger
from pydantic import ValidationError

from pvc.errors import ConfigError
from pvc.models.schemas import PvcConfig
from pvc.models.tensors import ModelParams
from pvc.presets import MODEL_PRESETS
from pvc.services.adaptive_compression import init_compression
from pvc.services.progressive_vit import check_stack, init_layers, init_stem
from pvc.utils.pvct import load_bundle, save_bundle
from pvc.utils.tensor_engine import Rng

MODEL_FORMAT = "pvc-model"
MANIFEST_NAME = "model.yaml"


def preset_config(name: str, **overrides) -> PvcConfig:
    if name not in MODEL_PRESETS:
        raise ConfigError(f"preset de modelo desconocido: {name} (disponibles: {', '.join(MODEL_PRESETS)})")
    return PvcConfig(**{**MODEL_PRESETS[name], **overrides})


def init_model(cfg: PvcConfig, seed: int, adaptive: bool = True) -> ModelParams:
    rng = Rng(seed)
    params = ModelParams(
        stem=init_stem(rng.child(0), cfg),
        layers=init_layers(rng.child(1), cfg),
        compression=init_compression(rng.child(2), cfg, adaptive),
    )
    logger.info(f"Modelo inicializado con semilla {seed}: {params.num_params()} parámetros")
    return params


def validate_model(cfg: PvcConfig, params: ModelParams) -> None:
    check_stack(cfg, params.layers)
    expected = {
        "stem.weight": (cfg.patch_size ** 2 * 3, cfg.channels),
        "stem.pos": (cfg.num_patches, cfg.channels),
        "compression.mlp.w_in": (cfg.shuffle_width, cfg.mlp_hidden),
    }
    tensors = params.as_dict()
    for name, shape in expected.items():
        if tensors[name].shape != shape:
            raise ConfigError(f"{name} tiene forma {tensors[name].shape}, la configuración pide {shape}")
    for i, layer in enumerate(params.layers):
        if layer.smha.wq.shape != (cfg.channels, cfg.channels):
            raise ConfigError(f"capa {i}: ancho {layer.smha.wq.shape[0]} != C={cfg.channels}")


def save_model(directory: Union[str, Path], cfg: PvcConfig, params: ModelParams,
               seed: Optional[int] = None) -> Path:
    manifest = {
        "format": MODEL_FORMAT,
        "seed": seed,
        "adaptive": params.compression.adaptive,
        "config": cfg.model_dump(),
    }
    return save_bundle(directory, params.as_dict(), manifest, manifest_name=MANIFEST_NAME)


def load_model(manifest_path: Union[str, Path]) -> Tuple[PvcConfig, ModelParams]:
    manifest, tensors = load_bundle(manifest_path)
    if manifest.get("format") != MODEL_FORMAT:
        raise ConfigError(f"{manifest_path} no es un manifiesto de modelo")
    try:
        cfg = PvcConfig(**manifest.get("config", {}))
        params = ModelParams.from_tensors(tensors)
    except (KeyError, ValidationError) as e:
        logger.error(f"Manifiesto {manifest_path} inconsistente: {e}")
        raise ConfigError(f"manifiesto inconsistente: {e}") from e
    unused = set(tensors) - set(params.as_dict())
    if unused:
        raise ConfigError(f"tensores sin destino en el modelo: {', '.join(sorted(unused))}")
    validate_model(cfg, params)
    logger.info(f"Modelo cargado de {manifest_path}")
    return cfg, params
