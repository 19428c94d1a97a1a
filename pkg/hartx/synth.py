"""Synthetic single-resident apartment: Markov activities emitting sensor events.

Each activity episode lasts a Poisson number of events (at least two, so the begin and
end markers land on distinct lines). During an episode the activity fires one of its
preferred sensors, or with probability ``noise`` any sensor uniformly.
"""
from __future__ import annotations

import datetime
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .data import SensorEvent, format_event_line
from .errors import ConfigError
from .logging_config import get_logger
from .utils import canonical_json, file_cid, sha256_cid, write_json

ACTIVITY_NAMES = (
    "Sleep", "Cook", "Eat", "Wash_Dishes", "Personal_Hygiene",
    "Relax", "Work", "Leave_Home", "Bathe", "Take_Medicine",
)
START = datetime.datetime(2010, 1, 4, 8, 0, 0)
MIN_DWELL = 2

_logger = get_logger("hartx.synth")


class SynthConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_activities: int = 5
    n_sensors: int = 20
    n_events: int = Field(20000, ge=MIN_DWELL)
    mean_dwell: float = Field(40.0, gt=0)
    sensors_per_activity: int = Field(2, ge=1)
    noise: float = Field(0.1, ge=0.0, le=1.0)
    mean_gap_seconds: float = Field(20.0, gt=0)
    # row-stochastic, zero diagonal; drawn from the seed when omitted
    transitions: list[list[float]] | None = None

    @model_validator(mode="after")
    def _check(self) -> SynthConfig:
        if self.n_activities < 2:
            raise ValueError(f"need at least 2 activities, got {self.n_activities}")
        if self.n_sensors < self.n_activities:
            raise ValueError(
                f"need n_sensors >= n_activities, got {self.n_sensors} < {self.n_activities}"
            )
        if self.transitions is not None:
            m = np.asarray(self.transitions, dtype=float)
            c = self.n_activities
            if m.shape != (c, c) or np.any(m < 0) or not np.allclose(m.sum(axis=1), 1.0):
                raise ValueError(f"transitions must be a {c}x{c} row-stochastic matrix")
        return self


def activity_names(n: int) -> list[str]:
    if n <= len(ACTIVITY_NAMES):
        return list(ACTIVITY_NAMES[:n])
    return [f"Activity_{i:02d}" for i in range(n)]


def sensor_names(n: int) -> list[str]:
    return [f"M{i + 1:03d}" for i in range(n)]


def transition_matrix(config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    if config.transitions is not None:
        return np.asarray(config.transitions, dtype=float)
    c = config.n_activities
    m = rng.dirichlet(np.ones(c), size=c)
    np.fill_diagonal(m, 0.0)
    return m / m.sum(axis=1, keepdims=True)


def preferred_sensors(config: SynthConfig) -> list[list[int]]:
    """Disjoint blocks of sensors, one block per activity (wrapping if short)."""
    k = config.sensors_per_activity
    v = config.n_sensors
    return [[(a * k + j) % v for j in range(k)] for a in range(config.n_activities)]


@dataclass
class SynthData:
    events: list[SensorEvent]
    labels: list[str]  # ground-truth activity per event
    classes: list[str]
    sensors: list[str]
    transitions: np.ndarray
    episodes: list[int]  # activity index per episode, in order


def synth_generate(config: SynthConfig, seed: int) -> SynthData:
    rng = np.random.default_rng(seed)
    names = activity_names(config.n_activities)
    sensors = sensor_names(config.n_sensors)
    trans = transition_matrix(config, rng)
    prefs = preferred_sensors(config)

    events: list[SensorEvent] = []
    labels: list[str] = []
    episodes: list[int] = []
    ts = START
    act = int(rng.integers(config.n_activities))
    remaining = config.n_events
    while remaining > 0:
        dwell = max(MIN_DWELL, int(rng.poisson(config.mean_dwell)))
        if remaining - dwell < MIN_DWELL:
            dwell = remaining
        episodes.append(act)
        for i in range(dwell):
            if rng.random() < config.noise:
                sensor = int(rng.integers(config.n_sensors))
            else:
                sensor = prefs[act][int(rng.integers(len(prefs[act])))]
            gap = 1 + int(rng.exponential(config.mean_gap_seconds) * 1e6)
            ts += datetime.timedelta(microseconds=gap)
            marker = "begin" if i == 0 else "end" if i == dwell - 1 else None
            activity = names[act] if marker else None
            events.append(SensorEvent(ts, sensors[sensor], "ON", activity, marker))
            labels.append(names[act])
        remaining -= dwell
        act = int(rng.choice(config.n_activities, p=trans[act]))
    return SynthData(events, labels, names, sensors, trans, episodes)


def empirical_transitions(episodes: list[int], n: int) -> np.ndarray:
    counts = np.zeros((n, n))
    for a, b in zip(episodes, episodes[1:], strict=False):
        counts[a, b] += 1
    totals = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)


def write_synthetic(
    config: SynthConfig, seed: int, out_dir: str | Path
) -> tuple[Path, Path, SynthData]:
    """Write ``events.txt`` and its ``manifest.json`` sidecar; returns both paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        data = synth_generate(config, seed)
        events_path = out / "events.txt"
        with open(events_path, "w", encoding="utf-8", newline="\n") as f:
            f.writelines(format_event_line(ev) + "\n" for ev in data.events)
        manifest = {
            "seed": seed,
            "config": config.model_dump(),
            "config_cid": sha256_cid(canonical_json(config.model_dump())),
            "classes": data.classes,
            "sensors": data.sensors,
            "transitions": data.transitions.tolist(),
            "n_events": len(data.events),
            "events_file": events_path.name,
            "events_cid": file_cid(events_path),
        }
        manifest_path = out / "manifest.json"
        write_json(manifest_path, manifest)
    except OSError as e:
        raise ConfigError(f"cannot write synthetic dataset to {out}: {e}") from e
    _logger.info(
        f"path={events_path} events={len(data.events)} "
        f"classes={len(data.classes)} sensors={len(data.sensors)}"
    )
    return events_path, manifest_path, data
