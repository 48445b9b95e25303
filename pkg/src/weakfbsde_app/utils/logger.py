#!src/weakfbsde_app/utils/logger.py
from __future__ import annotations

import logging
from dataclasses import dataclass
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Optional

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict
from rich.logging import RichHandler

from weakfbsde_app.utils.logging_jsonl import JsonlFormatter


class LoggingSettings(BaseSettings):
    """Logging configuration, isolated from the experiment config.

    Reads `.env` and the environment; unrelated keys are ignored.

    Attributes:
        log_dir: Directory for log files.
        console_level: Level of the console handler.
        file_level: Level of the rotating text file handler.
        file_name: Name of the text log file.
        jsonl_name: Name of the structured log file, empty to disable it.
        max_bytes: Rotation size.
        backup_count: Rotated files kept.
        rich_tracebacks: Rich tracebacks on the console.
    """

    model_config = SettingsConfigDict(
        env_file=".env",
        case_sensitive=False,
        extra="ignore",
        env_prefix="WEAKFBSDE_",
    )

    log_dir: Path = Field(default=Path("data/logs"), validation_alias="WEAKFBSDE_LOG_DIR")
    console_level: str = Field(default="WARNING", validation_alias="WEAKFBSDE_CONSOLE_LEVEL")
    file_level: str = Field(default="DEBUG", validation_alias="WEAKFBSDE_FILE_LEVEL")
    file_name: str = Field(default="weakfbsde.log", validation_alias="WEAKFBSDE_LOG_FILE")
    jsonl_name: str = Field(default="", validation_alias="WEAKFBSDE_JSONL_LOG")
    max_bytes: int = Field(default=5_000_000, validation_alias="WEAKFBSDE_LOG_MAX_BYTES")
    backup_count: int = Field(default=3, validation_alias="WEAKFBSDE_LOG_BACKUP_COUNT")
    rich_tracebacks: bool = Field(
        default=True, validation_alias="WEAKFBSDE_RICH_TRACEBACKS"
    )


@dataclass(slots=True)
class _Runtime:
    configured: bool = False


_runtime: _Runtime = _Runtime()


def configure_logging(*, settings: Optional[LoggingSettings] = None) -> None:
    """Configure global logging once: rich console, rotating file, optional JSONL.

    Args:
        settings: Optional override, mainly for tests.
    """
    if _runtime.configured:
        return

    s = settings or LoggingSettings()
    s.log_dir.mkdir(parents=True, exist_ok=True)

    root = logging.getLogger()
    root.setLevel(logging.DEBUG)
    root.handlers.clear()

    console_level = getattr(logging, s.console_level.upper(), logging.WARNING)
    file_level = getattr(logging, s.file_level.upper(), logging.DEBUG)

    console_handler = RichHandler(
        rich_tracebacks=bool(s.rich_tracebacks),
        markup=False,
        show_path=False,
        show_level=True,
        log_time_format="[%X]",
    )
    console_handler.setLevel(console_level)
    console_handler.setFormatter(logging.Formatter("%(message)s"))

    file_handler = RotatingFileHandler(
        filename=str(s.log_dir / s.file_name),
        maxBytes=int(s.max_bytes),
        backupCount=int(s.backup_count),
        encoding="utf_8",
    )
    file_handler.setLevel(file_level)
    file_handler.setFormatter(
        logging.Formatter("%(asctime)s | %(levelname)s | %(name)s | %(message)s")
    )

    root.addHandler(console_handler)
    root.addHandler(file_handler)

    if s.jsonl_name:
        jsonl_handler = logging.FileHandler(
            filename=str(s.log_dir / s.jsonl_name), encoding="utf_8"
        )
        jsonl_handler.setLevel(file_level)
        jsonl_handler.setFormatter(JsonlFormatter())
        root.addHandler(jsonl_handler)

    for noisy in ("matplotlib", "numba", "asyncio"):
        logging.getLogger(noisy).setLevel(logging.WARNING)

    logging.captureWarnings(True)
    _runtime.configured = True


def get_logger(name: str = "weakfbsde_app", level: str | None = None) -> logging.Logger:
    """Return a logger with global logging configured.

    Args:
        name: Logger name.
        level: Optional level override.

    Returns:
        Configured logger.
    """
    configure_logging()
    logger = logging.getLogger(name)
    if level:
        logger.setLevel(getattr(logging, level.upper(), logging.INFO))
    return logger
