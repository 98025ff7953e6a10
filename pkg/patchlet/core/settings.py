from functools import lru_cache
from pathlib import Path
from typing import Optional

from pydantic import Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from ..schemas import RunConfig
from .errors import ConfigError


class Settings(BaseSettings):
    """Process-level settings, read from PATCHLET_* variables or a .env file"""

    model_config = SettingsConfigDict(env_prefix="PATCHLET_", env_file=".env", extra="ignore")

    log_level: str = Field("INFO", description="Root log level")
    threads: int = Field(1, ge=1, description="Torch intra-op threads and rasterizer tile workers")
    checkpoint: Optional[Path] = Field(None, description="Checkpoint served by the render API")
    dataset: Optional[Path] = Field(None, description="Dataset whose cameras the render API may address by id")
    metrics_file: str = Field("metrics.jsonl", description="Metrics stream file name inside the output directory")
    tile_size: int = Field(16, ge=4, description="Rasterizer tile edge in pixels")


@lru_cache()
def get_settings() -> Settings:
    return Settings()


def load_run_config(path: Path, **overrides) -> RunConfig:
    """RunConfig from a JSON file with top-level field overrides applied"""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        config = RunConfig.model_validate_json(text)
        if overrides:
            config = RunConfig.model_validate({**config.model_dump(), **overrides})
    except ValidationError as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc
    return config
