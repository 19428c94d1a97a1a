"""Run configuration: optional JSON file, then flag overrides (flags win).

Overrides use dotted keys into the nested sections, e.g. ``pretrain.gamma=0.25`` or
``encoder.d_model=32``. Values are parsed as JSON when possible, otherwise kept as text.
"""
from __future__ import annotations

import json
from collections.abc import Mapping
from pathlib import Path
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .layers import EncoderConfig
from .model import ModelConfig, Pooling
from .ssl import PretrainConfig
from .synth import SynthConfig
from .train import FinetuneConfig
from .utils import write_json


class EncoderSection(BaseModel):
    """EncoderConfig minus input_dim, which is derived from the data vocabulary."""

    model_config = ConfigDict(extra="forbid")

    n_layers: int = Field(2, ge=0)
    d_model: int = Field(64, ge=1)
    n_heads: int = Field(4, ge=1)
    d_ff: int = Field(128, ge=1)
    seq_len: int = Field(32, ge=1)
    dropout_rate: float = Field(0.1, ge=0.0, lt=1.0)
    use_positional_encoding: bool = True

    def build(self, input_dim: int) -> EncoderConfig:
        return EncoderConfig(input_dim=input_dim, **self.model_dump())


def default_stride(seq_len: int) -> int:
    return max(1, seq_len // 2)


class DataSection(BaseModel):
    model_config = ConfigDict(extra="forbid")

    events: str | None = None
    # None: half-overlapping windows, stride = max(1, T // 2)
    stride: int | None = Field(None, ge=1)
    motion_only: bool = False
    include_numeric: bool = False
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    label_fraction: float = Field(1.0, gt=0.0, le=1.0)


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    out_dir: str = "runs/default"
    data: DataSection = Field(default_factory=DataSection)
    encoder: EncoderSection = Field(default_factory=EncoderSection)
    d_hidden: int = Field(64, ge=1)
    pooling: Pooling = "mean"
    synth: SynthConfig = Field(default_factory=SynthConfig)
    pretrain: PretrainConfig = Field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = Field(default_factory=FinetuneConfig)

    @model_validator(mode="after")
    def _check(self) -> RunConfig:
        if self.data.stride is not None and self.data.stride > self.encoder.seq_len:
            raise ValueError(
                f"data.stride={self.data.stride} exceeds encoder.seq_len={self.encoder.seq_len}"
            )
        if "optimizer" not in self.pretrain.model_fields_set:
            self.pretrain.optimizer = self.finetune.optimizer.model_copy()
        return self

    @property
    def stride(self) -> int:
        return self.data.stride or default_stride(self.encoder.seq_len)

    def model_config_for(self, input_dim: int, n_classes: int) -> ModelConfig:
        return ModelConfig(
            encoder=self.encoder.build(input_dim),
            n_classes=n_classes,
            d_hidden=self.d_hidden,
            pooling=self.pooling,
        )

    def pretrain_config(self) -> PretrainConfig:
        return self.pretrain.model_copy(update={"seed": self.seed})

    def finetune_config(self) -> FinetuneConfig:
        return self.finetune.model_copy(update={"seed": self.seed})


def parse_override(text: str) -> tuple[str, Any]:
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override must look like key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def apply_overrides(base: dict[str, Any], overrides: Mapping[str, Any]) -> dict[str, Any]:
    out = json.loads(json.dumps(base))
    for key, value in overrides.items():
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            elif not isinstance(child, dict):
                raise ConfigError(f"override {key!r}: {part!r} is not a section")
            node = child
        node[parts[-1]] = value
    return out


def load_run_config(
    path: str | Path | None = None, overrides: Mapping[str, Any] | None = None
) -> RunConfig:
    base: dict[str, Any] = {}
    if path is not None:
        try:
            base = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {path}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from e
        if not isinstance(base, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
    merged = apply_overrides(base, {k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return RunConfig.model_validate(merged)
    except ValidationError as e:
        raise ConfigError(f"invalid run config: {e}") from e


def write_resolved(config: RunConfig, out_dir: str | Path) -> Path:
    path = Path(out_dir) / "resolved_config.json"
    write_json(path, config.model_dump(mode="json"))
    return path
