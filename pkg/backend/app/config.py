"""Application configuration."""
from pathlib import Path
from typing import Any, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from app.models.schemas import ResolverMode
from app.utils.constants import (
    DEFAULT_CIPHER_KEY,
    DEFAULT_CIPHER_STUB,
    DEFAULT_ENTRY_POINT,
    DEFAULT_MAX_ITERS,
    DEFAULT_MODEL_NAME,
)


BACKEND_DIR = Path(__file__).resolve().parent.parent


class ConfigError(ValueError):
    """Invalid or incomplete run configuration (CLI exit code 2)."""


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_file=".env", case_sensitive=False, extra="ignore")

    # Inputs
    RULES_DIR: Path = BACKEND_DIR / "rules"
    CLASSIFY_FILE: Optional[Path] = None
    ENTRY_POINT: str = DEFAULT_ENTRY_POINT
    TA_UUID: Optional[str] = None

    # Repair loop
    RESOLVER_MODE: ResolverMode = "heuristic"
    MAX_ITERS: int = DEFAULT_MAX_ITERS
    OUTPUT_DIR: Path = Path("repaired")
    FIXTURES_DIR: Path = BACKEND_DIR / "corpus" / "fixtures"

    # Model endpoint (external / record modes)
    MODEL_ENDPOINT_URL: Optional[str] = None
    MODEL_API_KEY: Optional[str] = None
    MODEL_NAME: str = DEFAULT_MODEL_NAME
    MODEL_TIMEOUT_SECONDS: float = 60.0

    # Oracle cipher stub
    CIPHER_STUB: str = DEFAULT_CIPHER_STUB
    CIPHER_KEY: int = DEFAULT_CIPHER_KEY

    LOG_LEVEL: str = "INFO"

    @property
    def model_configured(self) -> bool:
        """Whether the live model client has everything it needs."""
        return bool(self.MODEL_ENDPOINT_URL and self.MODEL_API_KEY)


load_dotenv()

settings = Settings()


class RunConfig(BaseModel):
    """One CLI invocation: flags layered over `settings`."""

    inputs: list[Path] = Field(default_factory=list)
    rules_dir: Path
    classify_file: Optional[Path] = None
    resolver: ResolverMode = "heuristic"
    model_only: bool = False
    max_iters: int = DEFAULT_MAX_ITERS
    output_dir: Path = Path("repaired")
    in_place: bool = False
    fixtures_dir: Path
    endpoint_url: Optional[str] = None
    api_key: Optional[str] = None
    model_name: str = DEFAULT_MODEL_NAME
    timeout_seconds: float = 60.0
    entry_point: str = DEFAULT_ENTRY_POINT
    ta_uuid: Optional[str] = None
    cipher: str = DEFAULT_CIPHER_STUB
    cipher_key: int = DEFAULT_CIPHER_KEY

    @model_validator(mode="after")
    def _check(self) -> "RunConfig":
        if self.max_iters < 1:
            raise ConfigError(f"max iterations must be >= 1, got {self.max_iters}")
        if self.resolver in ("external", "record") and not (self.endpoint_url and self.api_key):
            raise ConfigError(
                f"resolver mode {self.resolver!r} requires MODEL_ENDPOINT_URL and MODEL_API_KEY"
            )
        return self


def build_run_config(**overrides: Any) -> RunConfig:
    """RunConfig from `settings`, with non-None keyword overrides taking precedence."""
    base: dict[str, Any] = {
        "rules_dir": settings.RULES_DIR,
        "classify_file": settings.CLASSIFY_FILE,
        "resolver": settings.RESOLVER_MODE,
        "max_iters": settings.MAX_ITERS,
        "output_dir": settings.OUTPUT_DIR,
        "fixtures_dir": settings.FIXTURES_DIR,
        "endpoint_url": settings.MODEL_ENDPOINT_URL,
        "api_key": settings.MODEL_API_KEY,
        "model_name": settings.MODEL_NAME,
        "timeout_seconds": settings.MODEL_TIMEOUT_SECONDS,
        "entry_point": settings.ENTRY_POINT,
        "ta_uuid": settings.TA_UUID,
        "cipher": settings.CIPHER_STUB,
        "cipher_key": settings.CIPHER_KEY,
    }
    base.update({key: value for key, value in overrides.items() if value is not None})
    try:
        return RunConfig(**base)
    except ValidationError as e:
        # validator errors arrive wrapped; surface the first message
        raise ConfigError(e.errors()[0]["msg"]) from e
