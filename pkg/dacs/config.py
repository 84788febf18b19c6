import logging
import os
from typing import Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError

from dacs.errors import ConfigError

LOG_FORMAT = "%(levelname)-5.5s [%(name)s] %(message)s"


class AppSettings(BaseModel):
    """Process-wide settings read from the environment (and a .env file if present)."""

    log_level: str = "INFO"
    results_url: str = "sqlite:///dacs_results.db"
    workers: int = Field(default=1, ge=1)
    metrics_port: Optional[int] = None
    seed: int = 0


def load_settings(env_file: Optional[str] = None) -> AppSettings:
    """Build AppSettings from DACS_* environment variables."""
    load_dotenv(env_file)
    port = os.getenv("DACS_METRICS_PORT")
    try:
        return AppSettings(
            log_level=os.getenv("DACS_LOG_LEVEL", "INFO"),
            results_url=os.getenv("DACS_RESULTS_URL", "sqlite:///dacs_results.db"),
            workers=int(os.getenv("DACS_WORKERS", "1")),
            metrics_port=int(port) if port else None,
            seed=int(os.getenv("DACS_SEED", "0")),
        )
    except (ValueError, ValidationError) as e:
        raise ConfigError(f"Invalid DACS_* environment: {e}") from e


def configure_logging(level: str = "INFO") -> None:
    """Configure root logging for entry points."""
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT)
