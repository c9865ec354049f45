# presets/__init__.py
from .model_presets import MODEL_PRESETS
from .arch_presets import ARCH_PRESETS, WORKLOAD_PRESETS
from .normalization import NORMALIZATION_PRESETS

__all__ = [
    'MODEL_PRESETS',
    'ARCH_PRESETS',
    'WORKLOAD_PRESETS',
    'NORMALIZATION_PRESETS',
]
