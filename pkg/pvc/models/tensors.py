"""Modelos pydantic que transportan tensores: lotes de video, imágenes y pesos."""
from typing import Dict, Iterator, List, Optional, Tuple, Union, get_args, get_origin

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

Tensor = np.ndarray


class TensorModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


class ParamBundle(TensorModel):
    """Conjunto de pesos con nombres jerárquicos ("smha.wq", "layers.3.ffn.w_in")."""

    def named_tensors(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for field in type(self).model_fields:
            value = getattr(self, field)
            name = f"{prefix}{field}"
            if value is None:
                continue
            if isinstance(value, np.ndarray):
                yield name, value
            elif isinstance(value, ParamBundle):
                yield from value.named_tensors(f"{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    yield from item.named_tensors(f"{name}.{i}.")

    def as_dict(self) -> Dict[str, Tensor]:
        return dict(self.named_tensors())

    def num_params(self) -> int:
        return int(sum(t.size for _, t in self.named_tensors()))

    def replace(self, name: str, value: Tensor) -> "ParamBundle":
        """Copia con el tensor `name` sustituido; el resto se comparte."""
        head, _, rest = name.partition(".")
        current = getattr(self, head)
        if not rest:
            if not isinstance(current, np.ndarray) or current.shape != value.shape:
                raise KeyError(f"tensor {name} inexistente o de otra forma")
            return self.model_copy(update={head: value})
        if isinstance(current, (list, tuple)):
            idx, _, rest = rest.partition(".")
            items = list(current)
            items[int(idx)] = items[int(idx)].replace(rest, value)
            return self.model_copy(update={head: items})
        if current is None:
            raise KeyError(f"sub-bloque {head} ausente")
        return self.model_copy(update={head: current.replace(rest, value)})

    def map(self, fn) -> "ParamBundle":
        """Aplica `fn(name, tensor)` a cada tensor y devuelve un bundle nuevo."""
        out = self
        for name, t in list(self.named_tensors()):
            out = out.replace(name, fn(name, t))
        return out

    @classmethod
    def from_tensors(cls, tensors: Dict[str, Tensor], prefix: str = "") -> "ParamBundle":
        """Reconstruye el bundle desde nombres jerárquicos; inverso de `named_tensors`."""
        fields = {}
        for field, info in cls.model_fields.items():
            fields[field] = _build(info.annotation, tensors, f"{prefix}{field}")
        return cls(**fields)


def _present(tensors: Dict[str, Tensor], name: str) -> bool:
    return name in tensors or any(k.startswith(f"{name}.") for k in tensors)


def _build(annotation, tensors: Dict[str, Tensor], name: str):
    origin = get_origin(annotation)
    if origin is Union:
        inner = [a for a in get_args(annotation) if a is not type(None)][0]
        return _build(inner, tensors, name) if _present(tensors, name) else None
    if origin in (list, List):
        item = get_args(annotation)[0]
        count = 0
        while _present(tensors, f"{name}.{count}"):
            count += 1
        return [_build(item, tensors, f"{name}.{i}") for i in range(count)]
    if isinstance(annotation, type) and issubclass(annotation, ParamBundle):
        return annotation.from_tensors(tensors, f"{name}.")
    if name not in tensors:
        raise KeyError(f"falta el tensor {name}")
    return tensors[name]


class AttentionParams(ParamBundle):
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor
    bq: Tensor
    bk: Tensor
    bv: Tensor
    bo: Tensor


class NormParams(ParamBundle):
    gamma: Tensor
    beta: Tensor


class MlpParams(ParamBundle):
    w_in: Tensor
    b_in: Tensor
    w_out: Tensor
    b_out: Tensor


class TemporalEmbeddingParams(ParamBundle):
    w1: Tensor
    w2: Tensor

    @model_validator(mode="after")
    def check_dims(self):
        if self.w1.shape[1] != self.w2.shape[0]:
            raise ValueError(f"TE: w1 {self.w1.shape} y w2 {self.w2.shape} no encadenan")
        return self


class AdaLnParams(ParamBundle):
    w3: Tensor
    w4: Tensor
    w5: Tensor
    w6: Tensor

    @model_validator(mode="after")
    def check_square(self):
        d, h = self.w3.shape
        if self.w4.shape != (h, d) or self.w5.shape != (d, h) or self.w6.shape != (h, d):
            raise ValueError("AdaLN: W3..W6 deben mapear D -> H -> D")
        return self

    @property
    def dim(self) -> int:
        return self.w3.shape[0]


class LayerParams(ParamBundle):
    ln1: NormParams
    smha: AttentionParams
    ln2: NormParams
    ffn: MlpParams
    tmha: Optional[AttentionParams] = None
    adaln: Optional[AdaLnParams] = None
    te: Optional[TemporalEmbeddingParams] = None
    gate_alpha: Optional[Tensor] = None

    @property
    def is_temporal(self) -> bool:
        return self.tmha is not None

    @model_validator(mode="after")
    def check_temporal_parts(self):
        parts = [self.tmha, self.adaln, self.te, self.gate_alpha]
        if any(p is None for p in parts) and any(p is not None for p in parts):
            raise ValueError("capa temporal incompleta: tmha/adaln/te/gate van juntos")
        return self

    def plain(self) -> "LayerParams":
        return self.model_copy(update={"tmha": None, "adaln": None, "te": None, "gate_alpha": None})


class PatchEmbedParams(ParamBundle):
    weight: Tensor
    bias: Tensor
    pos: Tensor


class CompressionParams(ParamBundle):
    mlp: MlpParams
    adaln: Optional[AdaLnParams] = None
    te: Optional[TemporalEmbeddingParams] = None

    @property
    def adaptive(self) -> bool:
        return self.adaln is not None


class ModelParams(ParamBundle):
    stem: PatchEmbedParams
    layers: List[LayerParams]
    compression: CompressionParams


class VideoBatch(TensorModel):
    features: Tensor
    timestamps: Tensor
    is_static: bool = False

    @model_validator(mode="after")
    def check_batch(self):
        if self.features.ndim != 4:
            raise ValueError(f"VideoBatch espera [B,T,N,C], recibió {self.features.shape}")
        if self.timestamps.shape != (self.features.shape[1],):
            raise ValueError(f"{self.timestamps.shape[0]} timestamps para T={self.features.shape[1]}")
        return self

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        return tuple(self.features.shape)

    def with_features(self, features: Tensor) -> "VideoBatch":
        return VideoBatch(features=features, timestamps=self.timestamps, is_static=self.is_static)


class RawImage(TensorModel):
    pixels: Tensor

    @model_validator(mode="after")
    def check_pixels(self):
        p = self.pixels
        if p.ndim != 3 or p.shape[2] != 3 or p.dtype != np.uint8:
            raise ValueError(f"RawImage espera uint8 [H,W,3], recibió {p.dtype} {p.shape}")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ValueError("imagen vacía")
        return self

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])


class RawVideo(TensorModel):
    frames: List[RawImage]
    is_static: bool = False

    @model_validator(mode="after")
    def check_frames(self):
        if not self.frames:
            raise ValueError("un video necesita al menos un frame")
        size = self.frames[0].pixels.shape
        if any(f.pixels.shape != size for f in self.frames):
            raise ValueError("todos los frames deben tener el mismo tamaño")
        return self

    @property
    def native_frame_count(self) -> int:
        return len(self.frames)
