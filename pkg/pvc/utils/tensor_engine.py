"""
Aritmética densa determinista sobre arreglos numpy float64 en orden row-major.

Todas las operaciones son funciones puras: nunca modifican sus entradas y
devuelven arreglos nuevos y contiguos. Un resultado con NaN/Inf es un error.
"""
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger
from scipy.special import erf

from pvc.config import get_settings
from pvc.errors import NonFiniteError, ShapeError

Tensor = np.ndarray
DTYPE = np.float64
Shape = Tuple[int, ...]


def check_finite(x: Tensor, op: str) -> Tensor:
    if not np.isfinite(x).all():
        logger.error(f"{op}: resultado con valores no finitos, shape={x.shape}")
        raise NonFiniteError(f"{op} produjo valores no finitos")
    return x


def as_tensor(data, shape: Optional[Sequence[int]] = None) -> Tensor:
    """Construye un tensor float64 contiguo, opcionalmente con una forma dada."""
    x = np.array(data, dtype=DTYPE, order="C")
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise ShapeError(f"extensiones no positivas: {shape}")
        if int(np.prod(shape)) != x.size:
            raise ShapeError(f"product({shape}) != {x.size} valores")
        x = x.reshape(shape)
    return check_finite(x, "as_tensor")


def zeros(shape: Sequence[int]) -> Tensor:
    return np.zeros(tuple(shape), dtype=DTYPE)


def ones(shape: Sequence[int]) -> Tensor:
    return np.ones(tuple(shape), dtype=DTYPE)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul espera matrices, recibió {a.shape} y {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: extensiones internas distintas {a.shape} x {b.shape}")
    return check_finite(np.matmul(a, b), "matmul")


def linear(x: Tensor, w: Tensor, b: Optional[Tensor] = None) -> Tensor:
    """x[..., k] @ w[k, n] (+ b[n]) aplicado a cada fila."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: {x.shape} no compatible con pesos {w.shape}")
    lead = x.shape[:-1]
    y = np.matmul(x.reshape(-1, x.shape[-1]), w).reshape(*lead, w.shape[1])
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ShapeError(f"linear: bias {b.shape} no coincide con {w.shape[1]}")
        y = y + b
    return check_finite(y, "linear")


def _axis(x: Tensor, axis: int) -> int:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"eje {axis} inválido para shape {x.shape}")
    return axis % x.ndim


def softmax(x: Tensor, axis: int = -1, mask: Optional[Tensor] = None) -> Tensor:
    """
    Softmax estable (resta del máximo). `mask` marca con True las posiciones
    excluidas; cada fila debe conservar al menos una posición visible.
    """
    axis = _axis(x, axis)
    if mask is not None:
        x = np.where(mask, -np.inf, x)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return check_finite(e / np.sum(e, axis=axis, keepdims=True), "softmax")


def _moments(x: Tensor, axis: int) -> Tuple[Tensor, Tensor]:
    mean = np.mean(x, axis=axis, keepdims=True)
    var = np.mean((x - mean) ** 2, axis=axis, keepdims=True)
    return mean, var


def _along(v: Tensor, ndim: int, axis: int) -> Tensor:
    shape = [1] * ndim
    shape[axis] = v.shape[0]
    return v.reshape(shape)


def layer_norm(
    x: Tensor,
    axis: int = -1,
    gamma: Optional[Tensor] = None,
    beta: Optional[Tensor] = None,
    eps: Optional[float] = None,
) -> Tensor:
    axis = _axis(x, axis)
    eps = get_settings().PVC_NORM_EPS if eps is None else eps
    width = x.shape[axis]
    for name, v in (("gamma", gamma), ("beta", beta)):
        if v is not None and v.shape != (width,):
            raise ShapeError(f"layer_norm: {name} {v.shape} no coincide con el eje de {width}")
    mean, var = _moments(x, axis)
    y = (x - mean) / np.sqrt(var + eps)
    if gamma is not None:
        y = y * _along(gamma, x.ndim, axis)
    if beta is not None:
        y = y + _along(beta, x.ndim, axis)
    return check_finite(y, "layer_norm")


def sigmoid(x: Tensor) -> Tensor:
    # exp(-|x|) nunca desborda
    x = np.asarray(x, dtype=DTYPE)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def silu(x: Tensor) -> Tensor:
    return check_finite(x * sigmoid(x), "silu")


def silu_grad(x: Tensor) -> Tensor:
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


def gelu(x: Tensor) -> Tensor:
    return check_finite(0.5 * x * (1.0 + erf(x / np.sqrt(2.0))), "gelu")


def gelu_grad(x: Tensor) -> Tensor:
    cdf = 0.5 * (1.0 + erf(x / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return cdf + x * pdf


def inverse_axes(axes: Sequence[int]) -> Tuple[int, ...]:
    return tuple(int(i) for i in np.argsort(axes))


def reshape_permute(
    x: Tensor,
    new_shape: Optional[Sequence[int]] = None,
    axes: Optional[Sequence[int]] = None,
) -> Tensor:
    """Permuta (si `axes`) y luego reorganiza (si `new_shape`); el resultado es row-major."""
    if axes is not None:
        if sorted(axes) != list(range(x.ndim)):
            raise ShapeError(f"permutación {tuple(axes)} inválida para {x.ndim} ejes")
        x = np.transpose(x, axes)
    if new_shape is not None:
        new_shape = tuple(int(s) for s in new_shape)
        if int(np.prod(new_shape)) != x.size:
            raise ShapeError(f"reshape: {x.shape} -> {new_shape} cambia la cantidad de elementos")
        x = x.reshape(new_shape)
    return np.ascontiguousarray(x, dtype=DTYPE)


class Rng:
    """
    Generador con semilla sobre Philox (basado en contador): misma semilla,
    misma secuencia. `child` deriva flujos independientes por nombre/índice.
    """

    def __init__(self, seed: int, key: Tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = tuple(key)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def child(self, index: int) -> "Rng":
        return Rng(self.seed, self.key + (int(index),))

    def uniform(self, shape: Sequence[int], low: float = 0.0, high: float = 1.0) -> Tensor:
        return self._gen.uniform(low, high, size=tuple(shape)).astype(DTYPE)

    def normal(self, shape: Sequence[int], std: float = 1.0, mean: float = 0.0) -> Tensor:
        return self._gen.normal(mean, std, size=tuple(shape)).astype(DTYPE)

    def integers(self, low: int, high: int, size: Union[int, Sequence[int], None] = None):
        return self._gen.integers(low, high, size=size)
