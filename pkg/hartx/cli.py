"""Command-line entry point: ``python -m hartx {gen,pretrain,finetune,eval}``.

Results (summaries, metric reports) are printed to stdout as JSON; logs go to stderr.
Exit codes: 0 success, 2 config error, 3 data error, 4 checkpoint error.
"""
from __future__ import annotations

import argparse
import json
import sys
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from dotenv import load_dotenv
from pydantic import ValidationError

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, apply_overrides, load_run_config, parse_override, write_resolved
from .data import (
    SampleWindow,
    SensorVocab,
    build_vocab,
    chronological_split,
    label_events,
    read_event_log,
    subsample_labels,
    window_events,
)
from .errors import CheckpointError, ConfigError, DataError, HartxError
from .logging_config import get_logger
from .model import init_model, transfer_encoder
from .ssl import pretrain, write_pretrain_log
from .synth import write_synthetic
from .train import evaluate, finetune
from .utils import write_json

SPLITS = ("all", "train", "val", "test")


def _logger():
    return get_logger("hartx.cli")


@dataclass
class Dataset:
    vocab: SensorVocab
    train: list[SampleWindow]
    val: list[SampleWindow]
    test: list[SampleWindow]

    def split(self, name: str) -> list[SampleWindow]:
        if name == "all":
            return [*self.train, *self.val, *self.test]
        return getattr(self, name)


def load_dataset(cfg: RunConfig, vocab: SensorVocab | None = None) -> Dataset:
    """Read, label, window and split the configured event log.

    With ``vocab`` given (from a checkpoint) every admitted sensor must already be known.
    """
    if not cfg.data.events:
        raise ConfigError("no event log given (use --events or data.events)")
    events = label_events(read_event_log(cfg.data.events))
    if vocab is None:
        vocab = build_vocab(
            events, motion_only=cfg.data.motion_only, include_numeric=cfg.data.include_numeric
        )
    else:
        unknown = vocab.unknown_sensors(events)
        if unknown:
            raise DataError(
                f"vocabulary mismatch: sensors not in the checkpoint vocabulary: {unknown}"
            )
    windows = window_events(events, vocab, cfg.encoder.seq_len, cfg.stride)
    if not windows:
        raise DataError(
            f"{cfg.data.events}: fewer admitted events than one window of T={cfg.encoder.seq_len}"
        )
    train, val, test = chronological_split(windows, cfg.data.split)
    _logger().info(
        f"events={len(events)} channels={vocab.n_channels} classes={vocab.n_classes} "
        f"windows={len(windows)} train={len(train)} val={len(val)} test={len(test)}"
    )
    return Dataset(vocab, train, val, test)


def _emit(obj: Any) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _prepare_out(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"cannot create output directory {out}: {e}") from e
    write_resolved(cfg, out)
    return out


def cmd_gen(cfg: RunConfig) -> dict[str, Any]:
    out = _prepare_out(cfg)
    events_path, manifest_path, data = write_synthetic(cfg.synth, cfg.seed, out)
    return {
        "events": len(data.events),
        "classes": data.classes,
        "sensors": len(data.sensors),
        "events_path": str(events_path),
        "manifest_path": str(manifest_path),
    }


def cmd_pretrain(cfg: RunConfig) -> dict[str, Any]:
    ds = load_dataset(cfg)
    out = _prepare_out(cfg)
    model_cfg = cfg.model_config_for(ds.vocab.n_channels, ds.vocab.n_classes)
    params = init_model(model_cfg, seed=cfg.seed, heads=("decoder_head", "pair_head"))
    params, rows = pretrain(ds.train, params, cfg.pretrain_config())
    write_pretrain_log(rows, out / "pretrain_log.csv")
    run_config = cfg.model_dump(mode="json")
    ckpt = save_checkpoint(params, ds.vocab, out / "pretrained.hartx", run_config=run_config)
    return {
        "checkpoint": str(ckpt),
        "steps": len(rows),
        "final_loss": rows[-1].loss if rows else None,
        "windows": len(ds.train),
    }


def cmd_finetune(cfg: RunConfig, from_pretrained: str | None = None) -> dict[str, Any]:
    if from_pretrained:
        pre = load_checkpoint(from_pretrained)
        ds = load_dataset(cfg, vocab=pre.vocab)
        target = cfg.model_config_for(ds.vocab.n_channels, ds.vocab.n_classes)
        if target.encoder.use_positional_encoding != pre.config.encoder.use_positional_encoding:
            raise CheckpointError(
                "incompatible pretrained checkpoint: use_positional_encoding differs"
            )
        try:
            params = transfer_encoder(pre.params, target, seed=cfg.seed)
        except ConfigError as e:
            raise CheckpointError(f"incompatible pretrained checkpoint: {e}") from e
        _logger().info(f"init=pretrained path={from_pretrained}")
    else:
        ds = load_dataset(cfg)
        target = cfg.model_config_for(ds.vocab.n_channels, ds.vocab.n_classes)
        params = init_model(target, seed=cfg.seed, heads=("classifier_head",))
        _logger().info("init=random")
    out = _prepare_out(cfg)

    train = subsample_labels(ds.train, cfg.data.label_fraction, np.random.default_rng(cfg.seed))
    _logger().info(
        f"label_fraction={cfg.data.label_fraction} train_labelled={len(train)} of={len(ds.train)}"
    )
    params, log = finetune(train, ds.val, params, cfg.finetune_config())
    log.to_csv(out / "finetune_log.csv")
    run_config = cfg.model_dump(mode="json")
    ckpt = save_checkpoint(params, ds.vocab, out / "finetuned.hartx", run_config=run_config)

    summary: dict[str, Any] = {
        "checkpoint": str(ckpt),
        "init": "pretrained" if from_pretrained else "random",
        "n_train": len(ds.train),
        "n_train_labelled": len(train),
        "best_epoch": log.best_epoch,
        "best_val_accuracy": log.best_val_accuracy,
        "test": None,
    }
    if ds.test:
        report = evaluate(ds.test, params, class_names=ds.vocab.classes)
        write_json(out / "test_metrics.json", report.model_dump())
        summary["test"] = {"accuracy": report.accuracy, "macro_f1": report.macro_f1}
    else:
        _logger().warning("test_split=empty test_metrics=skipped")
    return summary


def cmd_eval(checkpoint: str, cfg: RunConfig, split: str = "test") -> dict[str, Any]:
    ckpt = load_checkpoint(checkpoint)
    if "classifier_head" not in ckpt.params.heads:
        raise CheckpointError(
            f"checkpoint has no classifier_head (heads: {list(ckpt.params.heads)}); "
            "fine-tune it before evaluating"
        )
    if ckpt.config.encoder.seq_len != cfg.encoder.seq_len:
        raise CheckpointError(
            f"window length mismatch: checkpoint seq_len={ckpt.config.encoder.seq_len} "
            f"run seq_len={cfg.encoder.seq_len}"
        )
    ds = load_dataset(cfg, vocab=ckpt.vocab)
    windows = ds.split(split)
    if not windows:
        raise DataError(f"split {split!r} is empty")
    return evaluate(windows, ckpt.params, class_names=ckpt.vocab.classes).model_dump()


def _overrides(args: argparse.Namespace, flags: dict[str, str]) -> dict[str, Any]:
    out: dict[str, Any] = dict(parse_override(s) for s in args.set or [])
    for dest, key in flags.items():
        value = getattr(args, dest, None)
        if value is not None and value is not False:
            out[key] = value
    return out


_COMMON_FLAGS = {"seed": "seed", "out": "out_dir", "events": "data.events"}
_FLAGS = {
    "gen": {
        "n_events": "synth.n_events",
        "n_activities": "synth.n_activities",
        "n_sensors": "synth.n_sensors",
        "noise": "synth.noise",
    },
    "pretrain": {
        "gamma": "pretrain.gamma",
        "steps": "pretrain.steps",
        "motion_only": "data.motion_only",
        "seq_len": "encoder.seq_len",
    },
    "finetune": {"epochs": "finetune.epochs", "label_fraction": "data.label_fraction",
                 "motion_only": "data.motion_only", "seq_len": "encoder.seq_len"},
    "eval": {},
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="hartx", description="Transformer HAR over ambient sensor windows"
    )
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--config", help="JSON run config; flags override it")
        sp.add_argument(
            "--set", action="append", metavar="KEY=VALUE", help="dotted override, repeatable"
        )
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")

    g = sub.add_parser("gen", help="write a synthetic event log and manifest")
    common(g)
    g.add_argument("--n-events", type=int)
    g.add_argument("--n-activities", type=int)
    g.add_argument("--n-sensors", type=int)
    g.add_argument("--noise", type=float)

    pt = sub.add_parser("pretrain", help="self-supervised pretraining")
    common(pt)
    pt.add_argument("--events", help="event log path")
    pt.add_argument("--gamma", type=float)
    pt.add_argument("--steps", type=int)
    pt.add_argument("--seq-len", type=int, help="window length T")
    pt.add_argument("--motion-only", action="store_true")

    ft = sub.add_parser("finetune", help="supervised training of the classifier")
    common(ft)
    ft.add_argument("--events", help="event log path")
    ft.add_argument("--from-pretrained", help="pretrained checkpoint for the encoder")
    ft.add_argument("--label-fraction", type=float)
    ft.add_argument("--epochs", type=int)
    ft.add_argument("--seq-len", type=int, help="window length T")
    ft.add_argument("--motion-only", action="store_true")

    ev = sub.add_parser("eval", help="evaluate a checkpoint, report JSON on stdout")
    common(ev)
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--events", help="event log path")
    ev.add_argument("--split", choices=SPLITS, default="test")
    return p


def _eval_config(args: argparse.Namespace, overrides: dict[str, Any]) -> RunConfig:
    """The checkpoint's own run config, unless --config is given; flags win either way."""
    if args.config:
        return load_run_config(args.config, overrides)
    embedded = load_checkpoint(args.checkpoint).run_config
    if embedded is None:
        return load_run_config(None, overrides)
    try:
        return RunConfig.model_validate(apply_overrides(embedded, overrides))
    except ValidationError as e:
        raise ConfigError(f"invalid run config: {e}") from e


def main(argv: Sequence[str] | None = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    log = _logger()
    try:
        overrides = _overrides(args, {**_COMMON_FLAGS, **_FLAGS[args.command]})
        if args.command == "eval":
            result = cmd_eval(args.checkpoint, _eval_config(args, overrides), args.split)
        else:
            cfg = load_run_config(args.config, overrides)
            if args.command == "gen":
                result = cmd_gen(cfg)
            elif args.command == "pretrain":
                result = cmd_pretrain(cfg)
            else:
                result = cmd_finetune(cfg, args.from_pretrained)
    except ValidationError as e:
        log.error(f"command={args.command} error=config detail={e}")
        return ConfigError.exit_code
    except HartxError as e:
        log.error(f"command={args.command} error={type(e).__name__} detail={e}")
        return e.exit_code
    _emit(result)
    return 0
