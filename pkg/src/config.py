"""
Process-level settings for the bandit experiment runner.

Loads environment variables (optionally from a .env file); load_dotenv() is a no-op
for variables that are already set.
"""

import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

_LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


@dataclass(frozen=True)
class Settings:
    """Validated configuration from the environment."""

    output_root: Path
    log_level: str
    workers: int
    data_dir: Path | None

    @property
    def log_level_number(self) -> int:
        return logging.getLevelName(self.log_level)


def get_settings() -> Settings:
    """Load and validate settings; exit with an error on invalid values."""
    errors = []
    log_level = os.getenv("TEBANDIT_LOG_LEVEL", "INFO").strip().upper()
    if log_level not in _LOG_LEVELS:
        errors.append(f"TEBANDIT_LOG_LEVEL must be one of {', '.join(_LOG_LEVELS)}, got {log_level!r}")
    raw_workers = os.getenv("TEBANDIT_WORKERS", "1").strip()
    workers = 1
    try:
        workers = int(raw_workers)
        if workers < 1:
            raise ValueError
    except ValueError:
        errors.append(f"TEBANDIT_WORKERS must be a positive integer, got {raw_workers!r}")
    data_dir_raw = os.getenv("TEBANDIT_DATA_DIR", "").strip()
    data_dir = Path(data_dir_raw).expanduser().resolve() if data_dir_raw else None
    if data_dir is not None and not data_dir.is_dir():
        errors.append(f"TEBANDIT_DATA_DIR is not a directory: {data_dir}")
    if errors:
        for message in errors:
            print(f"ERROR: {message}", file=sys.stderr)
        sys.exit(2)
    return Settings(
        output_root=Path(os.getenv("TEBANDIT_OUTPUT_ROOT", "results")).expanduser(),
        log_level=log_level,
        workers=workers,
        data_dir=data_dir,
    )


# Singleton used by other modules
settings = get_settings()
