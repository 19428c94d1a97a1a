"""Ambient sensor event logs: parsing, activity labelling, vocabularies, windowing.

Event log lines look like (fields separated by runs of spaces or tabs)::

    2010-01-04 08:00:05.209589 M012 ON Sleep begin
    2010-01-04 08:00:07.000000 D002 OPEN

Windows are event-count windows: T consecutive admitted events, one one-hot row each.
"""
from __future__ import annotations

import datetime
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Literal

import numpy as np

from .errors import DataError
from .logging_config import get_logger

OTHER = "Other"
MARKERS = ("begin", "end")
N_NUMERIC_BINS = 4
_TS_FORMATS = ("%Y-%m-%d %H:%M:%S.%f", "%Y-%m-%d %H:%M:%S")

Marker = Literal["begin", "end"]


def _logger():
    return get_logger("hartx.data", level_env="HARTX_DATA_LOG_LEVEL")


@dataclass(frozen=True)
class SensorEvent:
    timestamp: datetime.datetime
    sensor_id: str
    value: str
    activity: str | None = None
    marker: Marker | None = None
    # resolved by label_events; never serialised
    label: str | None = field(default=None, compare=False)


def _parse_timestamp(text: str) -> datetime.datetime:
    for fmt in _TS_FORMATS:
        try:
            return datetime.datetime.strptime(text, fmt)
        except ValueError:
            continue
    raise ValueError(f"malformed timestamp {text!r}")


def parse_event_line(line: str, line_no: int | None = None) -> SensorEvent:
    where = f"line {line_no}" if line_no is not None else "event line"
    fields = line.split()
    if len(fields) < 4:
        raise DataError(f"{where}: expected at least 4 fields, got {len(fields)}: {line.strip()!r}")
    if len(fields) > 6:
        raise DataError(f"{where}: unexpected trailing fields {fields[6:]}")
    try:
        ts = _parse_timestamp(f"{fields[0]} {fields[1]}")
    except ValueError as e:
        raise DataError(f"{where}: {e}") from e
    activity = fields[4] if len(fields) > 4 else None
    marker = None
    if len(fields) == 6:
        if fields[5] not in MARKERS:
            raise DataError(f"{where}: unknown marker token {fields[5]!r}")
        marker = fields[5]
    return SensorEvent(ts, fields[2], fields[3], activity, marker)


def format_event_line(event: SensorEvent) -> str:
    """Canonical form: microsecond timestamp, single-space separators."""
    parts = [event.timestamp.strftime("%Y-%m-%d %H:%M:%S.%f"), event.sensor_id, event.value]
    if event.activity is not None:
        parts.append(event.activity)
        if event.marker is not None:
            parts.append(event.marker)
    return " ".join(parts)


def parse_event_lines(lines: Iterable[str]) -> list[SensorEvent]:
    events = [parse_event_line(ln, i) for i, ln in enumerate(lines, start=1) if ln.strip()]
    # stable: equal timestamps keep file order
    return sorted(events, key=lambda e: e.timestamp)


def read_event_log(path: str | Path) -> list[SensorEvent]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError as e:
        raise DataError(f"event log not found: {path}") from e
    except UnicodeDecodeError as e:
        raise DataError(f"event log {path} is not valid UTF-8 (byte {e.start}): {e.reason}") from e
    except OSError as e:
        raise DataError(f"cannot read event log {path}: {e}") from e
    events = parse_event_lines(text.splitlines())
    _logger().info(f"path={path} events={len(events)}")
    return events


def label_events(events: Sequence[SensorEvent]) -> list[SensorEvent]:
    """Resolve the activity in effect at every event.

    begin/end markers open and close intervals; nested intervals resolve innermost-wins.
    An annotated event without a marker is labelled with its own activity.
    """
    log = _logger()
    open_stack: list[str] = []
    out: list[SensorEvent] = []
    for ev in events:
        if ev.marker == "begin" and ev.activity:
            open_stack.append(ev.activity)
            label = ev.activity
        elif ev.marker == "end" and ev.activity:
            if ev.activity in open_stack:
                label = open_stack[-1]
                # drop the innermost open interval with this name
                idx = len(open_stack) - 1 - open_stack[::-1].index(ev.activity)
                del open_stack[idx]
            else:
                log.warning(
                    f"end_without_begin activity={ev.activity} ts={ev.timestamp.isoformat()}"
                )
                label = open_stack[-1] if open_stack else OTHER
        elif ev.activity and ev.marker is None:
            label = ev.activity
        else:
            label = open_stack[-1] if open_stack else OTHER
        out.append(replace(ev, label=label))
    for name in open_stack:
        log.warning(f"unclosed_begin activity={name} extends_to=EOF")
    return out


def is_numeric(value: str) -> bool:
    try:
        float(value)
    except ValueError:
        return False
    return True


def _is_motion_on(ev: SensorEvent) -> bool:
    return ev.sensor_id.startswith("M") and ev.value == "ON"


@dataclass(frozen=True)
class SensorVocab:
    """Channel and class indices.

    Channels are (sensor_id, value-class) pairs sorted lexicographically; classes have
    "Other" at index 0 and the remaining activities sorted.
    """

    channels: tuple[tuple[str, str], ...]
    classes: tuple[str, ...]
    motion_only: bool = False
    include_numeric: bool = False
    bin_edges: dict[str, tuple[float, ...]] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "_channel_index", {c: i for i, c in enumerate(self.channels)})
        object.__setattr__(self, "_class_index", {c: i for i, c in enumerate(self.classes)})

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def value_class(self, ev: SensorEvent) -> str | None:
        """Value class the event maps to, or None if the channel filters exclude it."""
        if self.motion_only and not _is_motion_on(ev):
            return None
        if is_numeric(ev.value):
            if not self.include_numeric:
                return None
            edges = self.bin_edges.get(ev.sensor_id)
            if edges is None:
                return "Q?"
            return f"Q{int(np.searchsorted(edges, float(ev.value), side='right'))}"
        return ev.value

    def channel_of(self, ev: SensorEvent) -> int | None:
        vc = self.value_class(ev)
        if vc is None:
            return None
        return self._channel_index.get((ev.sensor_id, vc))

    def class_of(self, label: str) -> int:
        try:
            return self._class_index[label]
        except KeyError as e:
            raise DataError(
                f"label {label!r} is not in the class vocabulary {list(self.classes)}"
            ) from e

    def unknown_sensors(self, events: Iterable[SensorEvent]) -> list[str]:
        """Admitted events whose channel is missing from this vocabulary."""
        unknown: set[str] = set()
        for ev in events:
            vc = self.value_class(ev)
            if vc is not None and (ev.sensor_id, vc) not in self._channel_index:
                unknown.add(ev.sensor_id if vc == ev.value else f"{ev.sensor_id}/{vc}")
        return sorted(unknown)

    def to_dict(self) -> dict[str, Any]:
        return {
            "channels": [list(c) for c in self.channels],
            "classes": list(self.classes),
            "motion_only": self.motion_only,
            "include_numeric": self.include_numeric,
            "bin_edges": {k: list(v) for k, v in sorted(self.bin_edges.items())},
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> SensorVocab:
        return cls(
            channels=tuple((str(a), str(b)) for a, b in d["channels"]),
            classes=tuple(d["classes"]),
            motion_only=bool(d.get("motion_only", False)),
            include_numeric=bool(d.get("include_numeric", False)),
            bin_edges={k: tuple(float(x) for x in v) for k, v in d.get("bin_edges", {}).items()},
        )


def build_vocab(
    events: Sequence[SensorEvent],
    motion_only: bool = False,
    include_numeric: bool = False,
    classes: Iterable[str] | None = None,
) -> SensorVocab:
    """Deterministic vocabulary over labelled events (or an explicit class list)."""
    edges: dict[str, tuple[float, ...]] = {}
    if include_numeric:
        readings: dict[str, list[float]] = {}
        for ev in events:
            if is_numeric(ev.value):
                readings.setdefault(ev.sensor_id, []).append(float(ev.value))
        qs = np.linspace(0.0, 1.0, N_NUMERIC_BINS + 1)[1:-1]
        edges = {s: tuple(float(q) for q in np.quantile(v, qs)) for s, v in readings.items()}
    bare = SensorVocab((), (OTHER,), motion_only, include_numeric, edges)
    channels = {(ev.sensor_id, vc) for ev in events if (vc := bare.value_class(ev)) is not None}
    if classes is None:
        classes = {ev.label or OTHER for ev in events}
    names = sorted(set(classes) - {OTHER})
    return SensorVocab(
        tuple(sorted(channels)), (OTHER, *names), motion_only, include_numeric, edges
    )


@dataclass
class SampleWindow:
    x: np.ndarray  # T x V, entries in {0, 1}
    label: int
    start_time: datetime.datetime


def majority_label(labels: Sequence[str]) -> str:
    """Most frequent label; ties go to the label seen first."""
    counts = Counter(labels)
    best = max(counts.values())
    return next(lab for lab in labels if counts[lab] == best)


def window_events(
    events: Sequence[SensorEvent], vocab: SensorVocab, T: int, stride: int
) -> list[SampleWindow]:
    if T < 1 or not 1 <= stride <= T:
        raise DataError(f"invalid windowing T={T} stride={stride} (need T >= 1, 1 <= stride <= T)")
    admitted: list[tuple[int, SensorEvent]] = []
    for ev in events:
        if ev.label is None:
            raise DataError("window_events needs labelled events (run label_events first)")
        ch = vocab.channel_of(ev)
        if ch is not None:
            admitted.append((ch, ev))
    if len(admitted) < T:
        return []
    windows: list[SampleWindow] = []
    for start in range(0, len(admitted) - T + 1, stride):
        chunk = admitted[start : start + T]
        x = np.zeros((T, vocab.n_channels))
        x[np.arange(T), [ch for ch, _ in chunk]] = 1.0
        label = vocab.class_of(majority_label([ev.label for _, ev in chunk]))
        windows.append(SampleWindow(x, label, chunk[0][1].timestamp))
    return windows


def stack_windows(windows: Sequence[SampleWindow]) -> tuple[np.ndarray, np.ndarray]:
    if not windows:
        raise DataError("no windows to stack")
    return np.stack([w.x for w in windows]), np.array([w.label for w in windows], dtype=np.int64)


def chronological_split(
    windows: Sequence[SampleWindow], fractions: Sequence[float] = (0.8, 0.1, 0.1)
) -> tuple[list[SampleWindow], list[SampleWindow], list[SampleWindow]]:
    """Train/val/test in time order; no shuffling across the boundaries."""
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise DataError(
            f"split fractions must be three non-negative numbers summing to 1, got {fractions}"
        )
    ordered = sorted(windows, key=lambda w: w.start_time)
    n = len(ordered)
    n_train = int(round(n * fractions[0]))
    n_val = int(round(n * fractions[1]))
    return ordered[:n_train], ordered[n_train : n_train + n_val], ordered[n_train + n_val :]


def subsample_labels(
    windows: Sequence[SampleWindow], fraction: float, rng: np.random.Generator
) -> list[SampleWindow]:
    """Keep round(fraction * n) windows (at least one), preserving time order."""
    if not 0.0 < fraction <= 1.0:
        raise DataError(f"label fraction must be in (0, 1], got {fraction}")
    n = len(windows)
    if fraction == 1.0 or n == 0:
        return list(windows)
    k = max(1, int(round(fraction * n)))
    keep = np.sort(rng.choice(n, size=k, replace=False))
    return [windows[i] for i in keep]
