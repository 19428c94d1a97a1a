"""Adam, supervised fine-tuning of the recognition model, and evaluation metrics."""
from __future__ import annotations

import csv
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from sklearn.metrics import accuracy_score, confusion_matrix, precision_recall_fscore_support

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .data import SampleWindow, stack_windows
from .errors import DataError, ShapeError
from .logging_config import get_logger
from .model import ModelParams, classifier_logits, clone_params

FINETUNE_SECTIONS = ("encoder", "classifier_head")
LOG_CSV_FIELDS = ("epoch", "split", "loss", "accuracy", "macro_f1")

_logger = get_logger("hartx.train", level_env="HARTX_TRAIN_LOG_LEVEL")


class OptimizerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lr: float = Field(1e-3, ge=0.0)
    beta1: float = Field(0.9, ge=0.0, lt=1.0)
    beta2: float = Field(0.999, ge=0.0, lt=1.0)
    eps: float = Field(1e-8, gt=0.0)


@dataclass
class OptimizerState:
    lr: float
    beta1: float
    beta2: float
    eps: float
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, config: OptimizerConfig | None = None) -> OptimizerState:
        c = config or OptimizerConfig()
        return cls(lr=c.lr, beta1=c.beta1, beta2=c.beta2, eps=c.eps)


def adam_step(
    params: Mapping[str, Tensor],
    state: OptimizerState,
    grads: Mapping[str, np.ndarray] | None = None,
) -> tuple[Mapping[str, Tensor], OptimizerState]:
    """Bias-corrected Adam update, in place on ``params``; grads default to ``p.grad``."""
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, p in params.items():
        g = grads[name] if grads is not None else p.grad
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape:
            raise ShapeError(
                f"optimizer state for {name} has shape {m.shape}, parameter has {p.shape}"
            )
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


class FinetuneConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = Field(10, ge=0)
    batch_size: int = Field(32, ge=1)
    seed: int = 0
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)


class ClassMetrics(BaseModel):
    name: str
    precision: float
    recall: float
    f1: float
    support: int


class MetricsReport(BaseModel):
    n_samples: int
    loss: float | None
    accuracy: float
    macro_f1: float
    per_class: list[ClassMetrics]
    confusion: list[list[int]]  # rows: true class, columns: predicted class


def metrics_from_predictions(
    labels: Sequence[int] | np.ndarray,
    preds: Sequence[int] | np.ndarray,
    n_classes: int,
    loss: float | None = None,
    class_names: Sequence[str] | None = None,
) -> MetricsReport:
    y = np.asarray(labels, dtype=np.int64)
    p = np.asarray(preds, dtype=np.int64)
    if y.size == 0:
        raise DataError("cannot compute metrics on an empty set")
    if y.shape != p.shape:
        raise DataError(f"labels and predictions differ in length: {y.size} vs {p.size}")
    outside = sorted({int(v) for v in np.concatenate([y, p]) if not 0 <= v < n_classes})
    if outside:
        raise DataError(f"class indices outside [0, {n_classes}): {outside}")
    classes = list(range(n_classes))
    confusion = confusion_matrix(y, p, labels=classes)
    precision, recall, f1, support = precision_recall_fscore_support(
        y, p, labels=classes, average=None, zero_division=0
    )
    names = list(class_names) if class_names is not None else [str(i) for i in range(n_classes)]
    return MetricsReport(
        n_samples=int(y.size),
        loss=loss,
        accuracy=float(accuracy_score(y, p)),
        macro_f1=float(f1.mean()),
        per_class=[
            ClassMetrics(
                name=names[c],
                precision=float(precision[c]),
                recall=float(recall[c]),
                f1=float(f1[c]),
                support=int(support[c]),
            )
            for c in range(n_classes)
        ],
        confusion=confusion.tolist(),
    )


def _check_labels(windows: Sequence[SampleWindow], n_classes: int) -> None:
    bad = sorted({w.label for w in windows if not 0 <= w.label < n_classes})
    if bad:
        raise DataError(f"labels outside the class vocabulary [0, {n_classes}): {bad}")


def evaluate(
    windows: Sequence[SampleWindow],
    params: ModelParams,
    batch_size: int = 256,
    class_names: Sequence[str] | None = None,
) -> MetricsReport:
    """One deterministic pass in evaluation mode; parameters are left untouched."""
    if not windows:
        raise DataError("cannot evaluate an empty dataset")
    n_classes = params.config.n_classes
    _check_labels(windows, n_classes)
    xs, ys = stack_windows(windows)
    preds = np.empty(len(ys), dtype=np.int64)
    loss_sum = 0.0
    for start in range(0, len(ys), batch_size):
        logits = classifier_logits(xs[start : start + batch_size], params)
        batch_y = ys[start : start + batch_size]
        loss_sum += ad.cross_entropy(logits, batch_y).item() * len(batch_y)
        preds[start : start + batch_size] = logits.data.argmax(axis=1)
    return metrics_from_predictions(ys, preds, n_classes, loss_sum / len(ys), class_names)


@dataclass
class LogRow:
    epoch: int
    split: str
    loss: float
    accuracy: float
    macro_f1: float


@dataclass
class TrainingLog:
    rows: list[LogRow] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_accuracy: float | None = None

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f)
            w.writerow(LOG_CSV_FIELDS)
            for r in self.rows:
                w.writerow([r.epoch, r.split, repr(r.loss), repr(r.accuracy), repr(r.macro_f1)])

    def split(self, name: str) -> list[LogRow]:
        return [r for r in self.rows if r.split == name]


def finetune(
    train: Sequence[SampleWindow],
    val: Sequence[SampleWindow],
    params: ModelParams,
    config: FinetuneConfig,
) -> tuple[ModelParams, TrainingLog]:
    """Minimise classifier cross-entropy; returns the best-validation parameters."""
    log = TrainingLog()
    if config.epochs == 0:
        return params, log
    if not train:
        raise DataError("cannot fine-tune on an empty training set")
    n_classes = params.config.n_classes
    _check_labels(train, n_classes)
    _check_labels(val, n_classes)
    xs, ys = stack_windows(train)
    rng = np.random.default_rng(config.seed)
    state = OptimizerState.create(config.optimizer)
    trainable = params.parameter_dict(FINETUNE_SECTIONS)
    best: ModelParams | None = None

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(ys))
        loss_sum = 0.0
        preds = np.empty(len(ys), dtype=np.int64)
        for start in range(0, len(ys), config.batch_size):
            idx = order[start : start + config.batch_size]
            ad.zero_grads(trainable.values())
            with Tape() as tape:
                logits = classifier_logits(xs[idx], params, training=True, rng=rng)
                loss = ad.cross_entropy(logits, ys[idx])
                tape.backward(loss)
            adam_step(trainable, state)
            loss_sum += loss.item() * len(idx)
            preds[idx] = logits.data.argmax(axis=1)
        report = metrics_from_predictions(ys, preds, n_classes, loss_sum / len(ys))
        log.rows.append(LogRow(epoch, "train", report.loss, report.accuracy, report.macro_f1))
        _logger.info(
            f"epoch={epoch} split=train loss={report.loss:.4f} accuracy={report.accuracy:.4f}"
        )

        if val:
            vr = evaluate(val, params)
            log.rows.append(LogRow(epoch, "val", vr.loss, vr.accuracy, vr.macro_f1))
            _logger.info(f"epoch={epoch} split=val loss={vr.loss:.4f} accuracy={vr.accuracy:.4f}")
            if log.best_val_accuracy is None or vr.accuracy > log.best_val_accuracy:
                log.best_epoch, log.best_val_accuracy = epoch, vr.accuracy
                best = clone_params(params)
    if best is None:
        log.best_epoch = config.epochs
        return params, log
    return best, log
