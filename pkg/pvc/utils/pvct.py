"""
Formato binario PVCT y manifiestos YAML.

Layout (little-endian): b"PVCT" | u32 versión (=1) | u32 ndim |
ndim x u64 extensiones | payload float64 row-major.
"""
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np
import yaml
from loguru import logger

from pvc.errors import PvctFormatError
from pvc.utils.tensor_engine import DTYPE, Tensor

MAGIC = b"PVCT"
VERSION = 1
_U32 = np.dtype("<u4")
_U64 = np.dtype("<u8")
_F64 = np.dtype("<f8")

PathLike = Union[str, Path]


def encode_tensor(t: Tensor) -> bytes:
    t = np.ascontiguousarray(t, dtype=DTYPE)
    header = np.array([VERSION, t.ndim], dtype=_U32).tobytes()
    extents = np.array(t.shape, dtype=_U64).tobytes()
    return MAGIC + header + extents + t.astype(_F64).tobytes(order="C")


def decode_tensor(raw: bytes) -> Tensor:
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise PvctFormatError("magic PVCT ausente")
    version, ndim = np.frombuffer(raw, dtype=_U32, count=2, offset=4)
    if int(version) != VERSION:
        raise PvctFormatError(f"versión PVCT no soportada: {int(version)}")
    offset = 12 + 8 * int(ndim)
    if len(raw) < offset:
        raise PvctFormatError("cabecera PVCT truncada")
    shape: Tuple[int, ...] = tuple(int(s) for s in np.frombuffer(raw, dtype=_U64, count=int(ndim), offset=12))
    count = int(np.prod(shape)) if shape else 1
    if len(raw) - offset != 8 * count:
        raise PvctFormatError(f"payload PVCT de {len(raw) - offset} bytes, se esperaban {8 * count}")
    data = np.frombuffer(raw, dtype=_F64, count=count, offset=offset)
    return data.astype(DTYPE).reshape(shape)


def write_tensor(path: PathLike, t: Tensor) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_tensor(t))
    logger.debug(f"Tensor {tuple(t.shape)} guardado en {path}")
    return path


def read_tensor(path: PathLike) -> Tensor:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        logger.error(f"Error leyendo {path}: {e}")
        raise
    return decode_tensor(raw)


def write_manifest(path: PathLike, data: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(data, f, sort_keys=False)
    return path


def read_manifest(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise PvctFormatError(f"manifiesto inválido {path}: {e}") from e
    if not isinstance(data, dict):
        raise PvctFormatError(f"manifiesto {path} no es un mapa")
    return data


def save_bundle(directory: PathLike, tensors: Dict[str, Tensor], manifest: Dict[str, Any],
                manifest_name: str = "manifest.yaml") -> Path:
    """Un archivo PVCT por tensor y un manifiesto con nombre -> archivo."""
    directory = Path(directory)
    files = {}
    for name, t in tensors.items():
        filename = f"{name}.pvct"
        write_tensor(directory / filename, t)
        files[name] = filename
    path = write_manifest(directory / manifest_name, {**manifest, "tensors": files})
    logger.info(f"Guardados {len(files)} tensores en {directory}")
    return path


def load_bundle(manifest_path: PathLike) -> Tuple[Dict[str, Any], Dict[str, Tensor]]:
    manifest_path = Path(manifest_path)
    manifest = read_manifest(manifest_path)
    files = manifest.get("tensors")
    if not isinstance(files, dict):
        raise PvctFormatError(f"{manifest_path} no lista tensores")
    tensors = {name: read_tensor(manifest_path.parent / fname) for name, fname in files.items()}
    return manifest, tensors
