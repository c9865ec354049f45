"""
Estandarización de entradas como videos: imágenes repetidas como videos
estáticos, muestreo uniforme de frames, tiles de resolución dinámica y
normalización de píxeles.
"""
from fractions import Fraction
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from loguru import logger
from PIL import Image
from pydantic import Field

from pvc.errors import PvctFormatError
from pvc.models.schemas import InputConfig, PvcConfig
from pvc.models.tensors import RawImage, RawVideo, TensorModel
from pvc.presets import NORMALIZATION_PRESETS
from pvc.services.conditioning import relative_timestamps
from pvc.utils.pvct import read_tensor
from pvc.utils.tensor_engine import Tensor

Grid = Tuple[int, int]


class StandardizedInput(TensorModel):
    pixels: Tensor = Field(description="[B, T, px, px, 3] normalizado; B = tiles")
    timestamps: Tensor
    is_static: bool
    grid: Grid
    frame_indices: List[int]


def read_ppm(path: Union[str, Path]) -> RawImage:
    path = Path(path)
    with open(path, "rb") as f:
        if f.read(2) != b"P6":
            raise PvctFormatError(f"{path} no es un PPM binario (P6)")
    with Image.open(path) as img:
        pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
    logger.debug(f"PPM {path} leído: {pixels.shape[1]}x{pixels.shape[0]}")
    return RawImage(pixels=pixels.copy())


def write_ppm(path: Union[str, Path], img: RawImage) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img.pixels).save(path, format="PPM")
    return path


def read_frame_stack(path: Union[str, Path]) -> RawVideo:
    """Frames pre-decodificados en PVCT [T, H, W, 3] con valores enteros 0..255."""
    stack = read_tensor(path)
    if stack.ndim != 4 or stack.shape[-1] != 3:
        raise PvctFormatError(f"{path}: se esperaba [T,H,W,3], recibido {stack.shape}")
    if np.any(stack < 0) or np.any(stack > 255) or np.any(stack != np.round(stack)):
        raise PvctFormatError(f"{path}: los frames deben ser enteros en 0..255")
    frames = [RawImage(pixels=f.astype(np.uint8)) for f in stack]
    return RawVideo(frames=frames)


def image_to_static_video(img: RawImage, t_img: int) -> RawVideo:
    if t_img < 1:
        raise ValueError(f"t_img debe ser >= 1, recibido {t_img}")
    return RawVideo(frames=[RawImage(pixels=img.pixels.copy()) for _ in range(t_img)], is_static=True)


def uniform_indices(native: int, count: int) -> List[int]:
    """idx_i = round(i * (L_v - 1) / (T - 1)), redondeo hacia arriba en .5; [0] si T=1."""
    if count < 1 or count > native:
        raise ValueError(f"no se pueden muestrear {count} frames de {native}")
    if count == 1:
        return [0]
    positions = np.arange(count) * (native - 1) / (count - 1)
    return [int(i) for i in np.floor(positions + 0.5)]


def sample_frames(v: RawVideo, count: int) -> RawVideo:
    idx = uniform_indices(v.native_frame_count, count)
    return RawVideo(frames=[v.frames[i] for i in idx], is_static=v.is_static)


def choose_grid(width: int, height: int, max_tiles: int) -> Grid:
    """
    (filas, columnas) con r*c <= max_tiles que minimiza |c/r - aspecto|;
    empates: menos tiles, luego grillas más anchas.
    """
    if max_tiles < 1:
        raise ValueError("max_tiles debe ser >= 1")
    aspect = Fraction(width, height)
    candidates = [
        (abs(Fraction(c, r) - aspect), r * c, -c, r, c)
        for r in range(1, max_tiles + 1)
        for c in range(1, max_tiles // r + 1)
    ]
    _, _, _, rows, cols = min(candidates)
    return rows, cols


def resize(img: RawImage, width: int, height: int) -> RawImage:
    if (img.width, img.height) == (width, height):
        return img
    resized = Image.fromarray(img.pixels).resize((width, height), Image.Resampling.BILINEAR)
    return RawImage(pixels=np.asarray(resized, dtype=np.uint8).copy())


def dynamic_tile(img: RawImage, tile_px: int, max_tiles: int) -> Tuple[List[RawImage], Grid]:
    rows, cols = choose_grid(img.width, img.height, max_tiles)
    canvas = resize(img, cols * tile_px, rows * tile_px).pixels
    tiles = [
        RawImage(pixels=canvas[r * tile_px:(r + 1) * tile_px, c * tile_px:(c + 1) * tile_px].copy())
        for r in range(rows)
        for c in range(cols)
    ]
    logger.debug(f"Imagen {img.width}x{img.height} -> grilla {rows}x{cols}")
    return tiles, (rows, cols)


def reassemble_tiles(tiles: List[RawImage], grid: Grid) -> RawImage:
    rows, cols = grid
    strips = [np.concatenate([t.pixels for t in tiles[r * cols:(r + 1) * cols]], axis=1) for r in range(rows)]
    return RawImage(pixels=np.concatenate(strips, axis=0))


def normalize(images: Union[RawImage, List[RawImage]], mean=(0.5, 0.5, 0.5), std=(0.5, 0.5, 0.5)) -> Tensor:
    """uint8 [.., H, W, 3] -> float64: (p/255 - mean) / std por canal."""
    pixels = images.pixels if isinstance(images, RawImage) else np.stack([i.pixels for i in images])
    return (pixels.astype(np.float64) / 255.0 - np.asarray(mean)) / np.asarray(std)


def denormalize(x: Tensor, mean=(0.5, 0.5, 0.5), std=(0.5, 0.5, 0.5)) -> Tensor:
    return (x * np.asarray(std) + np.asarray(mean)) * 255.0


class InputStandardizer:
    def __init__(self, cfg: InputConfig, model_cfg: Optional[PvcConfig] = None):
        if cfg.normalization not in NORMALIZATION_PRESETS:
            raise ValueError(f"normalización desconocida: {cfg.normalization}")
        self.cfg = cfg
        self.model_cfg = model_cfg
        self.mean, self.std = NORMALIZATION_PRESETS[cfg.normalization]

    def _stack(self, frames_per_tile: List[List[RawImage]]) -> Tensor:
        # [tiles][T] -> [B=tiles, T, px, px, 3]
        return np.stack([normalize(frames, self.mean, self.std) for frames in frames_per_tile])

    def standardize_image(self, img: RawImage) -> StandardizedInput:
        tiles, grid = dynamic_tile(img, self.cfg.tile_px, self.cfg.max_tiles)
        # Los tiles de una imagen comparten timestamps
        videos = [image_to_static_video(tile, self.cfg.t_img) for tile in tiles]
        pixels = self._stack([v.frames for v in videos])
        logger.info(f"Imagen estandarizada: {len(tiles)} tiles x {self.cfg.t_img} repeticiones")
        return StandardizedInput(
            pixels=pixels,
            timestamps=relative_timestamps(self.cfg.t_img),
            is_static=True,
            grid=grid,
            frame_indices=[0] * self.cfg.t_img,
        )

    def standardize_video(self, video: RawVideo) -> StandardizedInput:
        count = video.native_frame_count if self.cfg.frames is None else self.cfg.frames
        self._check_frame_bounds(count)
        idx = uniform_indices(video.native_frame_count, count)
        frames = [video.frames[i] for i in idx]
        px = self.cfg.tile_px
        if self.cfg.tile_videos:
            per_frame = [dynamic_tile(f, px, self.cfg.max_tiles) for f in frames]
            grid = per_frame[0][1]
            tracks = [[tiles[j] for tiles, _ in per_frame] for j in range(grid[0] * grid[1])]
        else:
            grid = (1, 1)
            tracks = [[resize(f, px, px) for f in frames]]
        logger.info(f"Video estandarizado: {count} de {video.native_frame_count} frames, grilla {grid}")
        return StandardizedInput(
            pixels=self._stack(tracks),
            timestamps=relative_timestamps(count),
            is_static=video.is_static,
            grid=grid,
            frame_indices=idx,
        )

    def _check_frame_bounds(self, count: int) -> None:
        if self.model_cfg is None:
            return
        lo, hi = self.model_cfg.min_frames, self.model_cfg.max_frames
        if not lo <= count <= hi:
            raise ValueError(f"T={count} fuera del rango de frames del modelo [{lo}, {hi}]")
