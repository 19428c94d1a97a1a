#!/usr/bin/env python
"""Held-out pair-classification accuracy after pretraining, averaged over seeds.

Usage:
  python scripts/pretrain_signal.py [--seeds 5] [--steps 2000] [--n-events 20000]

For each seed: generate the default synthetic dataset, pretrain on the training split
and measure pair accuracy on the test split (dropout off, augmentations on).
Prints per-seed accuracies and their mean as JSON.
"""
import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))
from hartx.config import default_stride  # noqa: E402
from hartx.data import build_vocab, chronological_split, label_events, window_events  # noqa: E402
from hartx.layers import EncoderConfig  # noqa: E402
from hartx.model import ModelConfig, init_model  # noqa: E402
from hartx.ssl import PretrainConfig, pair_accuracy, pretrain  # noqa: E402
from hartx.synth import SynthConfig, synth_generate  # noqa: E402


def run(seed: int, steps: int, n_events: int, seq_len: int, stride: int, gamma: float) -> dict:
    events = label_events(synth_generate(SynthConfig(n_events=n_events), seed=seed).events)
    vocab = build_vocab(events)
    train, _, test = chronological_split(window_events(events, vocab, seq_len, stride))
    enc = EncoderConfig(seq_len=seq_len, input_dim=vocab.n_channels)
    cfg = ModelConfig(encoder=enc, n_classes=vocab.n_classes)
    params = init_model(cfg, seed=seed, heads=("decoder_head", "pair_head"))
    before = pair_accuracy(test, params, seed=seed)
    params, rows = pretrain(train, params, PretrainConfig(steps=steps, gamma=gamma, seed=seed))
    return {
        "seed": seed,
        "pair_accuracy_before": before,
        "pair_accuracy": pair_accuracy(test, params, seed=seed),
        "first_loss": rows[0].loss if rows else None,
        "final_loss": rows[-1].loss if rows else None,
    }


def main() -> int:
    p = argparse.ArgumentParser()
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--n-events", type=int, default=20000)
    p.add_argument("--seq-len", type=int, default=32)
    p.add_argument("--stride", type=int, default=None, help="defaults to seq_len // 2")
    p.add_argument("--gamma", type=float, default=0.5)
    p.add_argument("--threshold", type=float, default=0.75)
    args = p.parse_args()

    stride = args.stride or default_stride(args.seq_len)
    results = [
        run(s, args.steps, args.n_events, args.seq_len, stride, args.gamma)
        for s in range(args.seeds)
    ]
    mean = sum(r["pair_accuracy"] for r in results) / len(results)
    summary = {"runs": results, "mean_pair_accuracy": mean, "pass": mean > args.threshold}
    print(json.dumps(summary, indent=2))
    return 0 if mean > args.threshold else 1


if __name__ == "__main__":
    sys.exit(main())
