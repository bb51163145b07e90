from typing import Optional

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", env_prefix="DGN_", extra="ignore")

    # Output
    OUT_DIR: Optional[str] = None

    # Runtime
    LOG_LEVEL: str = "INFO"
    THREADS: int = 1

    # Tracking (off when empty)
    MLFLOW_TRACKING_URI: str = ""
    MLFLOW_EXPERIMENT: str = "deformable-generator"


def get_settings() -> Settings:
    # без кэша: окружение читается при каждом вызове
    return Settings()
