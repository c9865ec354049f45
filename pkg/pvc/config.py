from functools import lru_cache
from pathlib import Path
from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    APP_TITLE: str = "pvc"
    APP_DESCRIPTION: str = "Progressive visual token compression: forward, checks and budgets"
    APP_VERSION: str = "1.0.0"

    BASE_DIR: Path = Path(__file__).parent
    PVC_RESULTS_DIR: Path = Path("results")
    PVC_LOG_FILE: Optional[Path] = None
    PVC_LOG_LEVEL: str = "INFO"

    # Semilla por defecto de todas las inicializaciones
    PVC_SEED: int = 0
    PVC_MODEL_PRESET: str = "toy"

    PVC_TS_SCALE: float = 1000.0
    PVC_NORM_EPS: float = 1e-6
    PVC_INIT_STD: float = 0.02

    PVC_FD_STEP: float = 1e-5
    PVC_GRAD_TOL: float = 1e-6

    model_config = SettingsConfigDict(env_file=".env", case_sensitive=True, extra="ignore")


@lru_cache()
def get_settings() -> Settings:
    return Settings()
