"""Single-file model checkpoints.

Layout (all integers little-endian)::

    b"HARTX"                  magic, 5 bytes
    uint32                    format version
    uint64                    metadata length in bytes
    metadata                  canonical JSON
    float64[...]              parameter arrays, C order, in ``named_parameters`` order

The metadata carries the model config, the heads present, the sensor vocabulary and
class list, the parameter names and shapes, and ``checksum`` =
``sha256_cid(canonical_json(metadata without checksum) + payload)``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError

from .data import SensorVocab
from .errors import CheckpointError
from .logging_config import get_logger
from .model import HEADS, ModelConfig, ModelParams, expected_shapes, params_from_arrays
from .utils import canonical_json, sha256_cid

MAGIC = b"HARTX"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<IQ")
_DTYPE = np.dtype("<f8")

_logger = get_logger("hartx.checkpoint")


@dataclass
class Checkpoint:
    params: ModelParams
    vocab: SensorVocab
    config: ModelConfig
    metadata: dict[str, Any]

    @property
    def run_config(self) -> dict[str, Any] | None:
        return self.metadata.get("run_config")


def _payload(params: ModelParams) -> bytes:
    parts = (np.ascontiguousarray(t.data, dtype=_DTYPE) for _, t in params.named_parameters())
    return b"".join(p.tobytes() for p in parts)


def save_checkpoint(
    params: ModelParams,
    vocab: SensorVocab,
    path: str | Path,
    run_config: dict[str, Any] | None = None,
) -> Path:
    cfg = params.config
    if vocab.n_channels != cfg.encoder.input_dim:
        raise CheckpointError(
            f"vocabulary has {vocab.n_channels} channels "
            f"but the model expects input_dim={cfg.encoder.input_dim}"
        )
    if vocab.n_classes != cfg.n_classes:
        raise CheckpointError(
            f"vocabulary has {vocab.n_classes} classes but the model has n_classes={cfg.n_classes}"
        )
    payload = _payload(params)
    meta: dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "model_config": cfg.model_dump(),
        "heads": list(params.heads),
        "vocab": vocab.to_dict(),
        "classes": list(vocab.classes),
        "parameters": [[name, list(t.shape)] for name, t in params.named_parameters()],
        "run_config": run_config,
    }
    meta["checksum"] = sha256_cid(canonical_json(meta) + payload)
    meta_bytes = canonical_json(meta)
    out = Path(path)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "wb") as f:
            f.write(MAGIC)
            f.write(_HEADER.pack(FORMAT_VERSION, len(meta_bytes)))
            f.write(meta_bytes)
            f.write(payload)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {out}: {e}") from e
    _logger.info(
        f"path={out} params={len(meta['parameters'])} bytes={len(payload)} "
        f"checksum={meta['checksum']}"
    )
    return out


def _config_diff(have: ModelConfig, want: ModelConfig) -> list[str]:
    a, b = have.model_dump(), want.model_dump()
    diffs = [f"encoder.{k}: checkpoint={a['encoder'][k]} expected={b['encoder'][k]}"
             for k in a["encoder"] if a["encoder"][k] != b["encoder"][k]]
    diffs += [f"{k}: checkpoint={a[k]} expected={b[k]}"
              for k in a if k != "encoder" and a[k] != b[k]]
    return diffs


def load_checkpoint(path: str | Path, expected: ModelConfig | None = None) -> Checkpoint:
    """Read and verify a checkpoint; ``expected`` must match the embedded config exactly."""
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a hartx checkpoint (bad magic)")
    off = len(MAGIC)
    if len(raw) < off + _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    version, meta_len = _HEADER.unpack_from(raw, off)
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {version} is not supported (expected {FORMAT_VERSION})"
        )
    off += _HEADER.size
    if len(raw) < off + meta_len:
        raise CheckpointError(f"{path}: truncated metadata")
    try:
        meta = json.loads(raw[off : off + meta_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt metadata: {e}") from e
    payload = raw[off + meta_len :]

    body = {k: v for k, v in meta.items() if k != "checksum"}
    if meta.get("checksum") != sha256_cid(canonical_json(body) + payload):
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")

    try:
        config = ModelConfig.model_validate(meta["model_config"])
        vocab = SensorVocab.from_dict(meta["vocab"])
    except (KeyError, ValidationError) as e:
        raise CheckpointError(f"{path}: invalid embedded config: {e}") from e
    if expected is not None and expected != config:
        detail = "; ".join(_config_diff(config, expected))
        raise CheckpointError(f"{path}: config mismatch ({detail})")

    heads = [h for h in meta.get("heads", []) if h in HEADS]
    shapes = expected_shapes(config, heads)
    listed = {name: tuple(shape) for name, shape in meta["parameters"]}
    if listed != shapes:
        wrong = sorted(set(listed.items()) ^ set(shapes.items()))
        raise CheckpointError(
            f"{path}: parameter shapes disagree with the embedded config: {wrong[:6]}"
        )

    arrays: dict[str, np.ndarray] = {}
    pos = 0
    for name, shape in meta["parameters"]:
        n = int(np.prod(shape, dtype=np.int64)) * _DTYPE.itemsize
        if pos + n > len(payload):
            raise CheckpointError(f"{path}: truncated payload at {name}")
        flat = np.frombuffer(payload, dtype=_DTYPE, count=n // _DTYPE.itemsize, offset=pos)
        arrays[name] = flat.reshape(shape).astype(np.float64)
        pos += n
    if pos != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - pos} trailing payload bytes")

    params = params_from_arrays(config, heads, arrays)
    return Checkpoint(params=params, vocab=vocab, config=config, metadata=meta)
