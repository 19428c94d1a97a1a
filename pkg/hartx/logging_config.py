"""Logger setup shared by every hartx module.

Records go to stderr (stdout carries command results). ``HARTX_LOG_JSON`` switches
every logger to one JSON object per line; levels come from ``HARTX_LOG_LEVEL`` or a
per-area variable such as ``HARTX_TRAIN_LOG_LEVEL``.
"""
from __future__ import annotations

import json
import logging
import os
import sys

_JSON_ENV_VALUES = {"1", "true", "yes", "on"}
_TEXT_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(message)s"


class _JsonFormatter(logging.Formatter):  # pragma: no cover - pure formatting
    def format(self, record: logging.LogRecord) -> str:
        base = {
            "ts": self.formatTime(record, datefmt="%Y-%m-%dT%H:%M:%S"),
            "level": record.levelname,
            "logger": record.name,
            "msg": record.getMessage(),
        }
        if record.exc_info:
            base["exc"] = self.formatException(record.exc_info)
        return json.dumps(base, separators=(",", ":"))


class _StderrHandler(logging.StreamHandler):
    """Writes to whatever ``sys.stderr`` is at emit time."""

    def __init__(self) -> None:
        super().__init__(sys.stderr)

    @property
    def stream(self):  # type: ignore[override]
        return sys.stderr

    @stream.setter
    def stream(self, _value) -> None:
        pass


def json_logs_enabled() -> bool:
    return os.getenv("HARTX_LOG_JSON", "false").lower() in _JSON_ENV_VALUES


def resolve_level(level_env: str | None = None, default_level: str | None = None) -> int:
    """Per-area variable, else ``default_level``, else HARTX_LOG_LEVEL, else INFO."""
    fallback = default_level or os.getenv("HARTX_LOG_LEVEL", "INFO")
    name = (os.getenv(level_env, fallback) if level_env else fallback).upper()
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else logging.INFO


def get_logger(
    name: str, level_env: str | None = None, default_level: str | None = None
) -> logging.Logger:
    logger = logging.getLogger(name)
    if not logger.handlers:
        handler = _StderrHandler()
        fmt = _JsonFormatter() if json_logs_enabled() else logging.Formatter(_TEXT_FORMAT)
        handler.setFormatter(fmt)
        logger.addHandler(handler)
        logger.propagate = False
    logger.setLevel(resolve_level(level_env, default_level))
    return logger
