"""Environment-backed defaults."""

import os
import logging
from pathlib import Path
from typing import Optional
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

DEFAULT_SEED = 2023


class Settings:
    """Process-wide defaults read from the environment (or a .env file)."""

    def __init__(self):
        self.default_seed = self._read_seed(os.getenv("MEAF_SEED"))
        self.log_dir = os.getenv("MEAF_LOG_DIR")
        self.output_dir = Path(os.getenv("MEAF_OUTPUT_DIR", "runs"))

    @staticmethod
    def _read_seed(raw: Optional[str]) -> int:
        if raw is None or raw.strip() == "":
            return DEFAULT_SEED
        try:
            return int(raw)
        except ValueError:
            logger.warning(f"Ignoring non-integer MEAF_SEED={raw!r}, using {DEFAULT_SEED}")
            return DEFAULT_SEED


# Global settings instance
settings = Settings()
