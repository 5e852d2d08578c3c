# regularity_lab/app/core/config.py
import logging
import os
from functools import lru_cache
from pathlib import Path

from dotenv import load_dotenv
from pydantic import BaseModel, Field

load_dotenv()

# Lab configuration
LAB_THREADS = int(os.getenv("LAB_THREADS", "1"))
LAB_OUT = os.getenv("LAB_OUT", "./results")
LAB_LOG_LEVEL = os.getenv("LAB_LOG_LEVEL", "INFO")


class Settings(BaseModel):
    """
    Process-wide settings read from the environment
    """
    threads: int = Field(default=1, ge=1)
    output_root: Path = Path("./results")
    log_level: str = "INFO"


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """
    Build settings from LAB_* environment variables (and a .env file if present)
    """
    return Settings(
        threads=max(1, int(os.getenv("LAB_THREADS", str(LAB_THREADS)))),
        output_root=Path(os.getenv("LAB_OUT", LAB_OUT)),
        log_level=os.getenv("LAB_LOG_LEVEL", LAB_LOG_LEVEL).upper(),
    )


def configure_logging(level: str = None):
    """
    Configure root logging once for CLI runs
    """
    level = level or get_settings().log_level
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
