import numpy as np
import pytest
from loguru import logger

from pvc.models.schemas import PvcConfig
from pvc.models.tensors import RawImage
from pvc.services.model_store import preset_config
from pvc.utils.tensor_engine import Rng


@pytest.fixture(autouse=True)
def quiet_logger():
    logger.remove()
    yield
    logger.remove()


@pytest.fixture
def toy_cfg() -> PvcConfig:
    return preset_config("toy")


@pytest.fixture
def rng() -> Rng:
    return Rng(1234)


@pytest.fixture
def make_image():
    def _make(width: int, height: int, seed: int = 0) -> RawImage:
        pixels = np.random.default_rng(seed).integers(0, 256, size=(height, width, 3), dtype=np.uint8)
        return RawImage(pixels=pixels)
    return _make


@pytest.fixture
def parse_report():
    """Líneas key=value de un reporte; el resto se ignora."""
    def _parse(text: str) -> dict:
        out = {}
        for line in text.splitlines():
            key, sep, value = line.partition("=")
            if sep and key and " " not in key:
                out[key] = value.split(" ")[0]
        return out
    return _parse
