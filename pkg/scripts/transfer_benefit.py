#!/usr/bin/env python
"""Pretrained-then-finetuned vs random-init fine-tuning with few labels.

Usage:
  python scripts/transfer_benefit.py [--seeds 5] [--label-fraction 0.1] [--epochs 20]

For each seed both arms fine-tune on the same subsampled training labels. Reports mean
test accuracy per arm and the mean number of epochs until validation accuracy first
reaches --target (epochs+1 when never reached).
"""
import argparse
import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))
from hartx.config import default_stride  # noqa: E402
from hartx.data import (  # noqa: E402
    build_vocab,
    chronological_split,
    label_events,
    subsample_labels,
    window_events,
)
from hartx.layers import EncoderConfig  # noqa: E402
from hartx.model import ModelConfig, init_model, transfer_encoder  # noqa: E402
from hartx.ssl import PretrainConfig, pretrain  # noqa: E402
from hartx.synth import SynthConfig, synth_generate  # noqa: E402
from hartx.train import FinetuneConfig, evaluate, finetune  # noqa: E402


def epochs_to(log, target: float, epochs: int) -> int:
    for row in log.split("val"):
        if row.accuracy >= target:
            return row.epoch
    return epochs + 1


def run(seed: int, args: argparse.Namespace) -> dict:
    events = label_events(synth_generate(SynthConfig(n_events=args.n_events), seed=seed).events)
    vocab = build_vocab(events)
    train, val, test = chronological_split(window_events(events, vocab, args.seq_len, args.stride))
    labelled = subsample_labels(train, args.label_fraction, np.random.default_rng(seed))
    cfg = ModelConfig(encoder=EncoderConfig(seq_len=args.seq_len, input_dim=vocab.n_channels),
                      n_classes=vocab.n_classes)
    ft = FinetuneConfig(epochs=args.epochs, seed=seed)

    pre = init_model(cfg, seed=seed, heads=("decoder_head", "pair_head"))
    pre, _ = pretrain(train, pre, PretrainConfig(steps=args.pretrain_steps, seed=seed))
    arms = {
        "pretrained": transfer_encoder(pre, cfg, seed=seed),
        "random": init_model(cfg, seed=seed, heads=("classifier_head",)),
    }
    out = {"seed": seed, "n_labelled": len(labelled)}
    for name, params in arms.items():
        best, log = finetune(labelled, val, params, ft)
        out[name] = {
            "test_accuracy": evaluate(test, best).accuracy,
            "epochs_to_target": epochs_to(log, args.target, args.epochs),
        }
    return out


def main() -> int:
    p = argparse.ArgumentParser()
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--label-fraction", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--pretrain-steps", type=int, default=2000)
    p.add_argument("--n-events", type=int, default=20000)
    p.add_argument("--seq-len", type=int, default=32)
    p.add_argument("--stride", type=int, default=None, help="defaults to seq_len // 2")
    p.add_argument("--target", type=float, default=0.8)
    p.add_argument(
        "--tolerance",
        type=float,
        default=0.01,
        help="allowed accuracy shortfall of the pretrained arm",
    )
    args = p.parse_args()
    args.stride = args.stride or default_stride(args.seq_len)

    runs = [run(s, args) for s in range(args.seeds)]
    summary = {}
    for arm in ("pretrained", "random"):
        summary[arm] = {
            "mean_test_accuracy": float(np.mean([r[arm]["test_accuracy"] for r in runs])),
            "mean_epochs_to_target": float(np.mean([r[arm]["epochs_to_target"] for r in runs])),
        }
    pre, rnd = summary["pretrained"], summary["random"]
    ok = (
        pre["mean_test_accuracy"] >= rnd["mean_test_accuracy"] - args.tolerance
        and pre["mean_epochs_to_target"] <= rnd["mean_epochs_to_target"]
    )
    print(json.dumps({"runs": runs, "summary": summary, "pass": ok}, indent=2))
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
