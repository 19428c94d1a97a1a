import datetime
import logging

import numpy as np
import pytest

from hartx.data import (
    OTHER,
    SampleWindow,
    SensorEvent,
    SensorVocab,
    build_vocab,
    chronological_split,
    format_event_line,
    label_events,
    majority_label,
    parse_event_line,
    parse_event_lines,
    read_event_log,
    subsample_labels,
    window_events,
)
from hartx.errors import DataError
from hartx.logging_config import get_logger

T0 = datetime.datetime(2010, 1, 4, 8, 0, 0)


def _ev(i, sensor="M001", value="ON", activity=None, marker=None):
    return SensorEvent(T0 + datetime.timedelta(seconds=i), sensor, value, activity, marker)


def test_parse_annotated_line():
    ev = parse_event_line("2010-01-04 08:00:05.209589 M012 ON Sleep begin")
    assert ev.sensor_id == "M012"
    assert ev.value == "ON"
    assert ev.activity == "Sleep"
    assert ev.marker == "begin"
    assert ev.timestamp == datetime.datetime(2010, 1, 4, 8, 0, 5, 209589)


def test_parse_plain_line_tolerates_tabs():
    ev = parse_event_line("2010-01-04 08:00:07.000000\tD002\tOPEN")
    assert (ev.sensor_id, ev.value, ev.activity, ev.marker) == ("D002", "OPEN", None, None)


def test_parse_errors_name_the_line():
    with pytest.raises(DataError) as exc:
        parse_event_lines(["2010-01-04 08:00:07.000000 D002 OPEN", "garbage line"])
    assert "line 2" in str(exc.value)
    with pytest.raises(DataError):
        parse_event_line("2010-13-04 08:00:07 D002 OPEN")
    with pytest.raises(DataError):
        parse_event_line("2010-01-04 08:00:07 M001 ON Cook start")


def test_format_round_trip_is_canonical():
    line = "2010-01-04 08:00:05.209589 M012 ON Sleep begin"
    assert format_event_line(parse_event_line(line)) == line
    padded = parse_event_line("2010-01-04   08:00:05 M012 ON")
    assert format_event_line(padded) == "2010-01-04 08:00:05.000000 M012 ON"


def test_read_event_log_sorts_and_skips_blank_lines(tmp_path):
    path = tmp_path / "events.txt"
    path.write_bytes(
        b"2010-01-04 08:00:09.000000 M002 ON\r\n\r\n2010-01-04 08:00:01.000000 M001 ON\r\n"
    )
    events = read_event_log(path)
    assert [e.sensor_id for e in events] == ["M001", "M002"]
    with pytest.raises(DataError):
        read_event_log(tmp_path / "missing.txt")


def test_unreadable_event_logs_raise_data_errors(tmp_path):
    binary = tmp_path / "events.bin"
    binary.write_bytes(b"2010-01-04 08:00:09.000000 M002 ON\n\xff\xfe\n")
    with pytest.raises(DataError, match="not valid UTF-8"):
        read_event_log(binary)
    with pytest.raises(DataError, match="cannot read event log"):
        read_event_log(tmp_path)


def test_label_interval_encloses_events():
    events = [
        _ev(0, activity="Cook", marker="begin"),
        _ev(1),
        _ev(2),
        _ev(3, activity="Cook", marker="end"),
        _ev(4),
    ]
    assert [e.label for e in label_events(events)] == ["Cook", "Cook", "Cook", "Cook", OTHER]


def test_no_markers_means_other():
    assert {e.label for e in label_events([_ev(i) for i in range(5)])} == {OTHER}


def test_nested_intervals_resolve_innermost():
    events = [
        _ev(0, activity="A", marker="begin"),
        _ev(1),
        _ev(2, activity="B", marker="begin"),
        _ev(3),
        _ev(4, activity="B", marker="end"),
        _ev(5),
        _ev(6, activity="A", marker="end"),
    ]
    assert [e.label for e in label_events(events)] == ["A", "A", "B", "B", "B", "A", "A"]


def test_marker_anomalies_warn(caplog, monkeypatch):
    logger = get_logger("hartx.data")
    monkeypatch.setattr(logger, "propagate", True)
    with caplog.at_level(logging.WARNING, logger="hartx.data"):
        out = label_events(
            [_ev(0, activity="Cook", marker="end"), _ev(1, activity="Eat", marker="begin"), _ev(2)]
        )
    assert [e.label for e in out] == [OTHER, "Eat", "Eat"]
    assert "end_without_begin" in caplog.text
    assert "unclosed_begin" in caplog.text


def test_vocab_is_sorted_with_other_first():
    events = label_events([
        _ev(0, "M002", activity="Sleep", marker="begin"),
        _ev(1, "D001", "OPEN"),
        _ev(2, "M001", activity="Sleep", marker="end"),
        _ev(3, "M001", activity="Cook", marker="begin"),
        _ev(4, "M001", "OFF", activity="Cook", marker="end"),
    ])
    vocab = build_vocab(events)
    assert vocab.channels == (("D001", "OPEN"), ("M001", "OFF"), ("M001", "ON"), ("M002", "ON"))
    assert vocab.classes == (OTHER, "Cook", "Sleep")
    motion = build_vocab(events, motion_only=True)
    assert motion.channels == (("M001", "ON"), ("M002", "ON"))
    assert SensorVocab.from_dict(vocab.to_dict()) == vocab


def test_numeric_readings_are_binned_per_sensor():
    events = label_events([_ev(i, "T001", str(float(i))) for i in range(8)])
    assert build_vocab(events).channels == ()
    vocab = build_vocab(events, include_numeric=True)
    assert vocab.channels == tuple(("T001", f"Q{i}") for i in range(4))
    assert vocab.value_class(_ev(0, "T001", "0.0")) == "Q0"
    assert vocab.value_class(_ev(0, "T001", "7.0")) == "Q3"


def test_unknown_sensors_are_listed():
    vocab = build_vocab(label_events([_ev(0, "M001"), _ev(1, "M002")]))
    seen = [_ev(0, "M001"), _ev(1, "M099"), _ev(2, "D007", "OPEN")]
    assert vocab.unknown_sensors(seen) == ["D007", "M099"]


def _labelled(n, label="Cook"):
    return label_events([_ev(i, f"M00{i % 3 + 1}", activity=label) for i in range(n)])


def test_window_count_arithmetic():
    events = _labelled(10)
    vocab = build_vocab(events)
    assert len(window_events(events, vocab, 5, 5)) == 2
    assert len(window_events(events, vocab, 5, 1)) == 6
    assert window_events(events, vocab, 11, 1) == []
    w = window_events(events, vocab, 5, 5)[0]
    assert w.x.shape == (5, vocab.n_channels)
    assert np.array_equal(w.x.sum(axis=1), np.ones(5))
    assert w.start_time == T0
    with pytest.raises(DataError):
        window_events(events, vocab, 5, 6)
    with pytest.raises(DataError):
        window_events(events, vocab, 0, 1)


def test_majority_label():
    assert majority_label(["A", "A", "B", "B", "B"]) == "B"
    assert majority_label(["A", "B", "B", "A"]) == "A"


def test_window_needs_labelled_events():
    events = [_ev(i) for i in range(5)]
    vocab = build_vocab(label_events(events))
    with pytest.raises(DataError):
        window_events(events, vocab, 5, 5)


def _windows(n):
    return [
        SampleWindow(np.zeros((2, 2)), i % 3, T0 + datetime.timedelta(minutes=i)) for i in range(n)
    ]


def test_chronological_split_respects_time():
    shuffled = _windows(100)
    np.random.default_rng(0).shuffle(shuffled)
    train, val, test = chronological_split(shuffled)
    assert (len(train), len(val), len(test)) == (80, 10, 10)
    assert max(w.start_time for w in train) < min(w.start_time for w in val)
    assert max(w.start_time for w in val) < min(w.start_time for w in test)
    with pytest.raises(DataError):
        chronological_split(shuffled, (0.5, 0.5, 0.5))


def test_subsample_labels_counts():
    windows = _windows(200)
    kept = subsample_labels(windows, 0.1, np.random.default_rng(0))
    assert len(kept) == 20
    assert [w.start_time for w in kept] == sorted(w.start_time for w in kept)
    assert len(subsample_labels(windows[:3], 0.1, np.random.default_rng(0))) == 1
    kept = subsample_labels(windows, 1.0, np.random.default_rng(0))
    assert [id(w) for w in kept] == [id(w) for w in windows]
    with pytest.raises(DataError):
        subsample_labels(windows, 0.0, np.random.default_rng(0))
