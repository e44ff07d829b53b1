"""
Runtime defaults read from the environment (optionally a `.env` file).
"""

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv


DEFAULT_OUTPUT_DIR = "esigo-output"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


@dataclass(frozen=True)
class Environment:
    """Process-wide defaults for the command line"""
    output_dir: Path
    log_level: str
    workers: int


def load_environment(dotenv_path: Optional[str] = None) -> Environment:
    """Read ESIGO_* variables, letting a `.env` file fill in unset ones"""
    load_dotenv(dotenv_path=dotenv_path, override=False)

    workers_raw = os.getenv("ESIGO_WORKERS", "1")
    try:
        workers = max(1, int(workers_raw))
    except ValueError:
        workers = 1

    return Environment(
        output_dir=Path(os.getenv("ESIGO_OUTPUT_DIR", DEFAULT_OUTPUT_DIR)),
        log_level=os.getenv("ESIGO_LOG_LEVEL", "INFO").upper(),
        workers=workers,
    )


def configure_logging(level: str = "INFO") -> None:
    """Configure root logging for command-line use"""
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT)
