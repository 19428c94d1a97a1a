"""Hybrid autoencoder + binary pair-classifier pretraining.

Each window x gets two augmented views. All 2N views are encoded; the decoder must
reconstruct x itself from either view, and the pair head must tell whether two pooled
encodings come from the same window. The loss is L = gamma * L_a + L_c.
"""
from __future__ import annotations

import csv
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .data import SampleWindow, stack_windows
from .errors import ConfigError, DataError
from .logging_config import get_logger
from .model import ModelParams, decode, encode, pair_logits
from .train import OptimizerConfig, OptimizerState, adam_step

PRETRAIN_SECTIONS = ("encoder", "decoder_head", "pair_head")
LOSS_IDENTITY_TOL = 1e-12

_logger = get_logger("hartx.ssl", level_env="HARTX_TRAIN_LOG_LEVEL")


class AugmentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sensor_dropout: float = Field(0.1, ge=0.0, le=1.0)
    time_mask_prob: float = Field(1.0, ge=0.0, le=1.0)
    # None: floor(T / 8)
    time_mask_len: int | None = Field(None, ge=0)
    jitter_prob: float = Field(0.05, ge=0.0, le=1.0)

    @classmethod
    def identity(cls) -> AugmentConfig:
        return cls(sensor_dropout=0.0, time_mask_prob=0.0, jitter_prob=0.0)


@dataclass
class ViewPair:
    view_i: np.ndarray
    view_j: np.ndarray
    original: np.ndarray
    source_index: int


def augment(x: np.ndarray, rng: np.random.Generator, aug: AugmentConfig) -> np.ndarray:
    """Sensor dropout, then one time mask, then adjacent-row swaps."""
    v = x.copy()
    t = v.shape[0]
    if aug.sensor_dropout > 0:
        v[(v > 0) & (rng.random(v.shape) < aug.sensor_dropout)] = 0.0
    span = t // 8 if aug.time_mask_len is None else min(aug.time_mask_len, t)
    if span > 0 and aug.time_mask_prob > 0 and rng.random() < aug.time_mask_prob:
        start = int(rng.integers(0, t - span + 1))
        v[start : start + span] = 0.0
    if aug.jitter_prob > 0:
        for row in range(t - 1):
            if rng.random() < aug.jitter_prob:
                v[[row, row + 1]] = v[[row + 1, row]]
    return v


def make_views(
    x: np.ndarray,
    rng: np.random.Generator,
    aug: AugmentConfig | None = None,
    source_index: int = 0,
) -> ViewPair:
    aug = aug or AugmentConfig()
    return ViewPair(augment(x, rng, aug), augment(x, rng, aug), x, source_index)


def sample_pairs(n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(left sources, right sources, labels) for N pairs.

    ceil(N/2) positives pair both views of one source; the rest pair a view of one
    source with a view of a different, uniformly drawn source.
    """
    if n < 2:
        raise DataError(f"pair batches need N >= 2 windows, got {n}")
    order = rng.permutation(n)
    n_pos = (n + 1) // 2
    left = order.copy()
    right = order.copy()
    for k in range(n_pos, n):
        other = int(rng.integers(n - 1))
        right[k] = other if other < left[k] else other + 1
    labels = np.zeros(n, dtype=np.int64)
    labels[:n_pos] = 1
    return left, right, labels


@dataclass
class PairBatch:
    encodings_left: Tensor  # N x d_model
    encodings_right: Tensor
    pair_labels: np.ndarray  # 1 = same source
    left_sources: np.ndarray
    right_sources: np.ndarray
    pair_logits: Tensor  # N x 2
    reconstructions: Tensor  # 2N x T x V
    targets: np.ndarray  # 2N x T x V, the untouched originals
    views: list[ViewPair]


@dataclass
class HybridLossValue:
    total: Tensor
    recon: Tensor
    pair: Tensor
    gamma: float

    @property
    def values(self) -> tuple[float, float, float]:
        return self.total.item(), self.recon.item(), self.pair.item()


def build_pair_batch(
    batch: Sequence[SampleWindow] | np.ndarray,
    params: ModelParams,
    rng: np.random.Generator,
    aug: AugmentConfig | None = None,
    training: bool = True,
) -> PairBatch:
    xs = stack_windows(batch)[0] if not isinstance(batch, np.ndarray) else batch
    n = xs.shape[0]
    left, right, labels = sample_pairs(n, rng)
    views = [make_views(xs[s], rng, aug, s) for s in range(n)]
    stacked = np.concatenate(
        [np.stack([v.view_i for v in views]), np.stack([v.view_j for v in views])]
    )
    enc = encode(stacked, params, training=training, rng=rng)
    # rows 0..N-1 hold view_i of each source, rows N..2N-1 hold view_j
    h_left = ad.take(enc.pooled, left, axis=0)
    h_right = ad.take(enc.pooled, right + n, axis=0)
    return PairBatch(
        encodings_left=h_left,
        encodings_right=h_right,
        pair_labels=labels,
        left_sources=left,
        right_sources=right,
        pair_logits=pair_logits(h_left, h_right, params),
        reconstructions=decode(enc, params),
        targets=np.concatenate([xs, xs]),
        views=views,
    )


def hybrid_loss(pb: PairBatch, gamma: float) -> HybridLossValue:
    if not 0.0 <= gamma <= 1.0:
        raise ConfigError(f"gamma must lie in [0, 1], got {gamma}")
    recon = ad.l2_loss(pb.reconstructions, pb.targets)
    pair = ad.cross_entropy(pb.pair_logits, pb.pair_labels)
    total = ad.add(ad.scale(recon, gamma), pair)
    return HybridLossValue(total=total, recon=recon, pair=pair, gamma=gamma)


def pretrain_step(
    batch: Sequence[SampleWindow] | np.ndarray,
    params: ModelParams,
    gamma: float,
    state: OptimizerState,
    rng: np.random.Generator,
    aug: AugmentConfig | None = None,
) -> tuple[ModelParams, HybridLossValue]:
    """One Adam step on L over encoder, decoder head and pair head jointly."""
    trainable = params.parameter_dict(PRETRAIN_SECTIONS)
    ad.zero_grads(trainable.values())
    with Tape() as tape:
        pb = build_pair_batch(batch, params, rng, aug, training=True)
        loss = hybrid_loss(pb, gamma)
        tape.backward(loss.total)
    total, recon, pair = loss.values
    if abs(total - (gamma * recon + pair)) > LOSS_IDENTITY_TOL:
        raise AssertionError(f"loss identity violated: {total} != {gamma}*{recon} + {pair}")
    adam_step(trainable, state)
    return params, loss


class PretrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    steps: int = Field(200, ge=0)
    batch_size: int = Field(32, ge=2)
    gamma: float = Field(0.5, ge=0.0, le=1.0)
    seed: int = 0
    augment: AugmentConfig = Field(default_factory=AugmentConfig)
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)


@dataclass
class PretrainRow:
    step: int
    loss: float
    recon_loss: float
    pair_loss: float
    gamma: float


PRETRAIN_CSV_FIELDS = ("step", "loss", "recon_loss", "pair_loss", "gamma")


def write_pretrain_log(rows: Sequence[PretrainRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(PRETRAIN_CSV_FIELDS)
        for r in rows:
            w.writerow([r.step, repr(r.loss), repr(r.recon_loss), repr(r.pair_loss), repr(r.gamma)])


def pretrain(
    windows: Sequence[SampleWindow],
    params: ModelParams,
    config: PretrainConfig,
) -> tuple[ModelParams, list[PretrainRow]]:
    if len(windows) < 2:
        raise DataError(f"pretraining needs at least 2 windows, got {len(windows)}")
    xs, _ = stack_windows(windows)
    rng = np.random.default_rng(config.seed)
    state = OptimizerState.create(config.optimizer)
    size = min(config.batch_size, len(windows))
    rows: list[PretrainRow] = []
    for step in range(1, config.steps + 1):
        idx = np.sort(rng.choice(len(windows), size=size, replace=False))
        _, loss = pretrain_step(xs[idx], params, config.gamma, state, rng, config.augment)
        total, recon, pair = loss.values
        rows.append(PretrainRow(step, total, recon, pair, config.gamma))
        if step % 50 == 0 or step == config.steps:
            _logger.info(
                f"step={step} loss={total:.4f} recon_loss={recon:.4f} pair_loss={pair:.4f}"
            )
    return params, rows


def pair_accuracy(
    windows: Sequence[SampleWindow],
    params: ModelParams,
    aug: AugmentConfig | None = None,
    batch_size: int = 32,
    seed: int = 0,
) -> float:
    """Held-out pair classification accuracy, dropout off, augmentations on."""
    if batch_size < 2:
        raise ConfigError(f"pair accuracy needs batch_size >= 2, got {batch_size}")
    if len(windows) < 2:
        raise DataError(f"pair accuracy needs at least 2 windows, got {len(windows)}")
    xs, _ = stack_windows(windows)
    rng = np.random.default_rng(seed)
    correct = total = 0
    for start in range(0, len(windows), batch_size):
        chunk = xs[start : start + batch_size]
        if chunk.shape[0] < 2:
            continue
        pb = build_pair_batch(chunk, params, rng, aug, training=False)
        correct += int((pb.pair_logits.data.argmax(axis=1) == pb.pair_labels).sum())
        total += len(pb.pair_labels)
    return correct / total
