"""
Runtime configuration loaded from environment variables (and a .env file).
"""

import logging
import os

from dotenv import load_dotenv
from pydantic import BaseModel

# Load environment variables from .env file
load_dotenv()


class Settings(BaseModel):
    log_level: str = "INFO"
    seed: int = 0
    train_engine: str = "vectorized"
    freq_mhz: int = 500
    api_host: str = "0.0.0.0"
    api_port: int = 8000
    api_reload: bool = False
    max_jobs: int = 200


def get_settings() -> Settings:
    """Read settings from the environment. Not cached, so tests can patch os.environ."""
    return Settings(
        log_level=os.getenv("MXSIM_LOG_LEVEL", "INFO").upper(),
        seed=int(os.getenv("MXSIM_SEED", "0")),
        train_engine=os.getenv("MXSIM_TRAIN_ENGINE", "vectorized").lower(),
        freq_mhz=int(os.getenv("MXSIM_FREQ_MHZ", "500")),
        api_host=os.getenv("API_HOST", "0.0.0.0"),
        api_port=int(os.getenv("API_PORT", "8000")),
        api_reload=os.getenv("API_RELOAD", "false").lower() == "true",
        max_jobs=int(os.getenv("API_MAX_JOBS", "200")),
    )


def configure_logging(level: str | None = None) -> None:
    """Configure root logging once; later calls only adjust the level."""
    level_name = (level or get_settings().log_level).upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    logging.getLogger().setLevel(getattr(logging, level_name, logging.INFO))
