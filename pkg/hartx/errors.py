from __future__ import annotations


class HartxError(Exception):
    """Base error; `exit_code` is what the CLI returns when it surfaces."""

    exit_code = 1


class ConfigError(HartxError, ValueError):
    exit_code = 2


class DataError(HartxError, ValueError):
    exit_code = 3


class CheckpointError(HartxError):
    exit_code = 4


class ShapeError(ValueError):
    pass
