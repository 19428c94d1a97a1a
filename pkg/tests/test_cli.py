import csv
import json

import numpy as np
import pytest

from hartx import cli
from hartx.checkpoint import load_checkpoint
from hartx.config import load_run_config, write_resolved
from hartx.errors import CheckpointError, ConfigError, DataError

SMALL = [
    "--set", "encoder.n_layers=1",
    "--set", "encoder.d_model=16",
    "--set", "encoder.n_heads=2",
    "--set", "encoder.d_ff=16",
    "--set", "encoder.seq_len=10",
    "--set", "d_hidden=16",
]


def _run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr().out
    return code, (json.loads(out) if code == 0 else None)


@pytest.fixture()
def dataset(tmp_path, capsys):
    out = tmp_path / "data"
    code, summary = _run(capsys, "gen", "--seed", "7", "--n-events", "3000", "--out", str(out))
    assert code == 0
    return out / "events.txt", summary


def test_gen_writes_exact_event_count(dataset):
    events, summary = dataset
    assert summary["events"] == 3000
    assert len(events.read_text(encoding="utf-8").splitlines()) == 3000
    assert summary["sensors"] == 20
    assert len(summary["classes"]) == 5
    assert (events.parent / "manifest.json").exists()
    assert (events.parent / "resolved_config.json").exists()


def test_gen_is_reproducible(dataset, tmp_path, capsys):
    events, _ = dataset
    again = str(tmp_path / "again")
    code, _ = _run(capsys, "gen", "--seed", "7", "--n-events", "3000", "--out", again)
    assert code == 0
    assert (tmp_path / "again" / "events.txt").read_bytes() == events.read_bytes()


def test_gen_rejects_single_activity(tmp_path, capsys):
    code, _ = _run(capsys, "gen", "--n-activities", "1", "--out", str(tmp_path / "x"))
    assert code == 2


def _pretrain(capsys, events, out, *extra):
    return _run(
        capsys, "pretrain", "--events", str(events), "--out", str(out), "--steps", "5",
        "--set", "pretrain.batch_size=8", *SMALL, *extra,
    )


def test_pretrain_artifacts_and_loss_identity(dataset, tmp_path, capsys):
    events, _ = dataset
    out = tmp_path / "pre"
    code, summary = _pretrain(capsys, events, out, "--gamma", "0.25")
    assert code == 0
    assert summary["steps"] == 5
    for name in ("pretrained.hartx", "pretrain_log.csv", "resolved_config.json"):
        assert (out / name).exists()
    with open(out / "pretrain_log.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 5
    for r in rows:
        expected = float(r["gamma"]) * float(r["recon_loss"]) + float(r["pair_loss"])
        assert abs(float(r["loss"]) - expected) <= 1e-9
    ckpt = load_checkpoint(out / "pretrained.hartx")
    assert ckpt.params.heads == ("decoder_head", "pair_head")


def test_pretrain_gamma_zero_logs_pair_loss_only(dataset, tmp_path, capsys):
    events, _ = dataset
    code, _ = _pretrain(capsys, events, tmp_path / "pre0", "--gamma", "0")
    assert code == 0
    with open(tmp_path / "pre0" / "pretrain_log.csv", newline="") as f:
        assert all(r["loss"] == r["pair_loss"] for r in csv.DictReader(f))


def test_pretrain_error_exit_codes(dataset, tmp_path, capsys):
    events, _ = dataset
    code, _ = _pretrain(capsys, events, tmp_path / "bad", "--gamma", "1.5")
    assert code == 2
    code, _ = _pretrain(capsys, tmp_path / "nope.txt", tmp_path / "bad2")
    assert code == 3
    garbled = tmp_path / "garbled.txt"
    garbled.write_bytes(events.read_bytes()[:200] + b"\xff\n")
    code, _ = _pretrain(capsys, garbled, tmp_path / "bad3")
    assert code == 3


def _finetune(capsys, events, out, *extra):
    return _run(
        capsys, "finetune", "--events", str(events), "--out", str(out), "--epochs", "2",
        *SMALL, *extra,
    )


def test_finetune_from_scratch_then_eval_reproduces_best_val(dataset, tmp_path, capsys):
    events, _ = dataset
    out = tmp_path / "ft"
    code, summary = _finetune(capsys, events, out)
    assert code == 0
    assert summary["init"] == "random"
    artifacts = ("finetuned.hartx", "finetune_log.csv", "test_metrics.json", "resolved_config.json")
    for name in artifacts:
        assert (out / name).exists()

    code, report = _run(
        capsys, "eval", "--checkpoint", str(out / "finetuned.hartx"), "--split", "val"
    )
    assert code == 0
    assert report["accuracy"] == summary["best_val_accuracy"]
    n_classes = len(load_checkpoint(out / "finetuned.hartx").vocab.classes)
    assert np.array(report["confusion"]).shape == (n_classes, n_classes)


def test_finetune_from_pretrained_starts_from_its_encoder(dataset, tmp_path, capsys, monkeypatch):
    events, _ = dataset
    assert _pretrain(capsys, events, tmp_path / "pre")[0] == 0
    pre = load_checkpoint(tmp_path / "pre" / "pretrained.hartx")

    seen = {}
    real = cli.finetune

    def spy(train, val, params, config):
        seen.update({n: t.data.copy() for n, t in params.named_parameters(["encoder"])})
        return real(train, val, params, config)

    monkeypatch.setattr(cli, "finetune", spy)
    pretrained = str(tmp_path / "pre" / "pretrained.hartx")
    code, summary = _finetune(capsys, events, tmp_path / "ft", "--from-pretrained", pretrained)
    assert code == 0
    assert summary["init"] == "pretrained"
    for name, t in pre.params.named_parameters(["encoder"]):
        assert np.array_equal(seen[name], t.data)


def test_incompatible_pretrained_checkpoint(dataset, tmp_path, capsys):
    events, _ = dataset
    assert _pretrain(capsys, events, tmp_path / "pre")[0] == 0
    code, _ = _finetune(
        capsys, events, tmp_path / "ft",
        "--from-pretrained", str(tmp_path / "pre" / "pretrained.hartx"),
        "--set", "encoder.d_model=8",
    )
    assert code == 4


def test_label_fraction_subsamples_training_windows(dataset, tmp_path, capsys):
    events, _ = dataset
    code, summary = _finetune(
        capsys, events, tmp_path / "ft", "--label-fraction", "0.1", "--epochs", "1"
    )
    assert code == 0
    assert summary["n_train_labelled"] == max(1, round(0.1 * summary["n_train"]))


def test_eval_rejects_unknown_sensors(dataset, tmp_path, capsys):
    events, _ = dataset
    assert _finetune(capsys, events, tmp_path / "ft", "--epochs", "1")[0] == 0
    other = tmp_path / "other.txt"
    extra = "2011-01-01 00:00:00.000000 X999 ON\n"
    other.write_text(events.read_text(encoding="utf-8") + extra, encoding="utf-8")
    ckpt = str(tmp_path / "ft" / "finetuned.hartx")
    code, _ = _run(capsys, "eval", "--checkpoint", ckpt, "--events", str(other))
    assert code == 3

    cfg = load_run_config(tmp_path / "ft" / "resolved_config.json", {"data.events": str(other)})
    with pytest.raises(DataError, match="X999"):
        cli.cmd_eval(ckpt, cfg)


def test_eval_of_corrupt_checkpoint_exits_4(dataset, tmp_path, capsys):
    events, _ = dataset
    assert _finetune(capsys, events, tmp_path / "ft", "--epochs", "1")[0] == 0
    path = tmp_path / "ft" / "finetuned.hartx"
    raw = bytearray(path.read_bytes())
    raw[-1] ^= 0xFF
    path.write_bytes(bytes(raw))
    code, _ = _run(capsys, "eval", "--checkpoint", str(path), "--events", str(events))
    assert code == 4


def test_config_file_with_flag_overrides(tmp_path):
    path = tmp_path / "run.json"
    run = {"seed": 3, "pretrain": {"gamma": 0.1, "steps": 7}}
    path.write_text(json.dumps(run), encoding="utf-8")
    cfg = load_run_config(path, {"pretrain.gamma": 0.75})
    assert cfg.seed == 3
    assert cfg.pretrain.gamma == 0.75
    assert cfg.pretrain.steps == 7
    assert cfg.pretrain_config().seed == 3
    with pytest.raises(ConfigError):
        load_run_config(path, {"pretrain.nope": 1})
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "missing.json")


def test_resolved_config_reloads_to_the_same_run(dataset, tmp_path, capsys):
    events, _ = dataset
    out = tmp_path / "pre"
    assert _pretrain(capsys, events, out)[0] == 0
    resolved = load_run_config(out / "resolved_config.json")
    assert resolved.pretrain.steps == 5
    assert resolved.encoder.d_model == 16
    assert resolved.data.events == str(events)


def test_eval_of_pretrained_checkpoint_exits_4(dataset, tmp_path, capsys):
    events, _ = dataset
    assert _pretrain(capsys, events, tmp_path / "pre")[0] == 0
    ckpt = tmp_path / "pre" / "pretrained.hartx"
    code, _ = _run(capsys, "eval", "--checkpoint", str(ckpt), "--events", str(events))
    assert code == 4

    cfg = load_run_config(tmp_path / "pre" / "resolved_config.json")
    with pytest.raises(CheckpointError, match="classifier_head"):
        cli.cmd_eval(ckpt, cfg)


def test_default_stride_is_half_the_window():
    assert load_run_config().stride == 16
    assert load_run_config(None, {"encoder.seq_len": 10}).stride == 5
    assert load_run_config(None, {"encoder.seq_len": 1}).stride == 1
    assert load_run_config(None, {"data.stride": 3}).stride == 3


def test_pretrain_optimizer_follows_finetune_unless_set(tmp_path):
    cfg = load_run_config(None, {"finetune.optimizer.lr": 0.005})
    assert cfg.pretrain_config().optimizer.lr == 0.005
    assert cfg.finetune_config().optimizer.lr == 0.005

    cfg = load_run_config(None, {"finetune.optimizer.lr": 0.005, "pretrain.optimizer.lr": 0.02})
    assert cfg.pretrain_config().optimizer.lr == 0.02
    assert cfg.finetune_config().optimizer.lr == 0.005

    path = tmp_path / "run.json"
    path.write_text(json.dumps({"finetune": {"optimizer": {"lr": 0.004}}}), encoding="utf-8")
    resolved = load_run_config(write_resolved(load_run_config(path), tmp_path))
    assert resolved.pretrain.optimizer.lr == 0.004
    assert resolved.finetune.optimizer.lr == 0.004
