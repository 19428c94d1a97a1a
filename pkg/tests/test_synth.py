import json

import numpy as np
import pytest
from pydantic import ValidationError

from hartx.data import build_vocab, label_events, read_event_log, window_events
from hartx.synth import SynthConfig, empirical_transitions, synth_generate, write_synthetic
from hartx.utils import file_cid


def test_small_configs_are_rejected():
    with pytest.raises(ValidationError):
        SynthConfig(n_activities=1)
    with pytest.raises(ValidationError):
        SynthConfig(n_activities=5, n_sensors=3)
    with pytest.raises(ValidationError):
        SynthConfig(n_activities=2, transitions=[[0.5, 0.4], [1.0, 0.0]])


def test_same_seed_gives_identical_files(tmp_path):
    cfg = SynthConfig(n_events=2000)
    a, _, _ = write_synthetic(cfg, 7, tmp_path / "a")
    b, _, _ = write_synthetic(cfg, 7, tmp_path / "b")
    c, _, _ = write_synthetic(cfg, 8, tmp_path / "c")
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()


def test_file_has_one_line_per_event_and_a_manifest(tmp_path):
    cfg = SynthConfig(n_events=20000)
    events_path, manifest_path, data = write_synthetic(cfg, 7, tmp_path)
    lines = events_path.read_text(encoding="utf-8").splitlines()
    assert len(lines) == 20000
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    assert manifest["events_cid"] == file_cid(events_path)
    assert manifest["n_events"] == 20000
    assert manifest["classes"] == data.classes
    parsed = read_event_log(events_path)
    assert [e.label for e in label_events(parsed)] == data.labels


def test_episodes_alternate_activities():
    data = synth_generate(SynthConfig(n_events=5000), seed=1)
    assert all(a != b for a, b in zip(data.episodes, data.episodes[1:], strict=False))
    assert np.allclose(data.transitions.sum(axis=1), 1.0)
    assert np.all(np.diag(data.transitions) == 0.0)


def test_transition_frequencies_match_the_chain():
    cfg = SynthConfig(n_events=50000, mean_dwell=5)
    data = synth_generate(cfg, seed=3)
    emp = empirical_transitions(data.episodes, cfg.n_activities)
    tv = 0.5 * np.abs(emp - data.transitions).sum(axis=1)
    assert tv.max() < 0.05


def test_noise_free_dedicated_sensors_are_separable():
    cfg = SynthConfig(n_events=3000, noise=0.0, sensors_per_activity=1, mean_dwell=60)
    data = synth_generate(cfg, seed=5)
    events = label_events(data.events)
    vocab = build_vocab(events)
    windows = window_events(events, vocab, 15, 15)
    assert windows
    for w in windows:
        counts = w.x.sum(axis=0)
        activity = data.classes.index(vocab.classes[w.label])
        own = vocab.channels.index((data.sensors[activity], "ON"))
        assert counts[own] == counts.max()
