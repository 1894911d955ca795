from functools import lru_cache
from pathlib import Path
from typing import Literal

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-wide defaults, overridable through ``EXHAUST_*`` variables."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="EXHAUST_",
        env_ignore_empty=True,
        extra="ignore",
    )

    PROJECT_NAME: str = "circular-exhaustions"
    LOG_LEVEL: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    THREADS: int = 1
    OUTPUT_DIR: Path = Path("out")

    # lattice defaults (reference resolution)
    N_W: int = 33
    N_R: int = 24
    N_THETA: int = 32
    W_BOX: float = 4.0
    R_MIN: float = 0.1

    # tolerances
    EPS_DEG: float = 1e-3
    ODE_TOL: float = 1e-8
    T_BISECT_TOL: float = 1e-3
    S_BISECT_TOL: float = 1e-2
    C_CFL: float = 0.5
    CHECKPOINT_DT: float = 0.1

    @field_validator("THREADS")
    @classmethod
    def _positive_threads(cls, v: int) -> int:
        if v < 1:
            raise ValueError("THREADS must be >= 1")
        return v


@lru_cache
def get_settings() -> Settings:
    return Settings()


settings = get_settings()
