import logging
import os
import subprocess
from functools import lru_cache
from pathlib import Path

from dotenv import load_dotenv
from pydantic import BaseModel, Field

# default log level per environment
LOG_LEVEL_DEV = "INFO"
LOG_LEVEL_TEST = "WARNING"
LOG_LEVEL_PROD = "INFO"

load_dotenv()


class Settings(BaseModel):
    """Process-level settings; never carries the RNG seed"""

    env: str = Field(..., description="development / test / production")
    log_level: str = Field(default="INFO", description="root log level for the CLI")
    run_slow: bool = Field(default=False, description="enable long acceptance tests")
    update_golden: bool = Field(default=False, description="rewrite the pinned test outputs")


@lru_cache()
def get_settings() -> Settings:
    """Read settings from the environment (and .env) once"""
    env = os.getenv("POLARBEV_ENV", "development")
    if env == "test":
        log_level = LOG_LEVEL_TEST
    elif env == "production":
        log_level = os.getenv("POLARBEV_LOG_LEVEL", LOG_LEVEL_PROD)
    else:  # development
        log_level = os.getenv("POLARBEV_LOG_LEVEL", LOG_LEVEL_DEV)

    return Settings(
        env=env,
        log_level=log_level.upper(),
        run_slow=os.getenv("POLARBEV_RUN_SLOW", "0") == "1",
        update_golden=os.getenv("POLARBEV_UPDATE_GOLDEN", "0") == "1",
    )


def configure_logging(level: str | None = None) -> None:
    """Configure the package logger once for CLI use"""
    logging.basicConfig(
        level=getattr(logging, level or get_settings().log_level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def describe_version() -> str:
    """``git describe`` of the working tree, or the package version outside a checkout"""
    from polarbev import __version__

    try:
        out = subprocess.run(
            ["git", "describe", "--tags", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
            check=True,
        )
    except (OSError, subprocess.SubprocessError):
        return f"v{__version__}"
    return out.stdout.strip() or f"v{__version__}"
