"""Cell traces, demand profiles, spike labels, windowing and synthetic surrogates.

Trace files are two-column delimited text: a timestamp (epoch seconds or
ISO-8601) and an integer RNTI count. A header row is optional. One row is one
control step.
"""
from __future__ import annotations

import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import ConfigError, TraceFormatError
from .rng import stream

log = logging.getLogger(__name__)

NORM_EPS = 1e-8
SYNTH_KINDS = ("event-spike", "diurnal", "flat")
SYNTH_START = 1_600_000_000  # 2020-09-13T12:26:40Z; arbitrary fixed origin
SYNTH_CADENCE = 900  # seconds, a 15-minute reporting interval


@dataclass(frozen=True)
class TraceSeries:
    timestamps: np.ndarray  # epoch seconds, float64
    rnti_count: np.ndarray  # int64
    source_label: str = "trace"

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.float64)
        counts = np.asarray(self.rnti_count)
        if ts.ndim != 1 or counts.shape != ts.shape:
            raise TraceFormatError("timestamps and counts must be 1-D and of equal length")
        if counts.size and not np.issubdtype(counts.dtype, np.integer):
            if not np.all(counts == np.round(counts)):
                raise TraceFormatError("RNTI counts must be integers")
        counts = counts.astype(np.int64)
        if np.any(counts < 0):
            raise TraceFormatError(f"negative RNTI count at index {int(np.argmax(counts < 0))}")
        if ts.size > 1 and np.any(np.diff(ts) <= 0):
            raise TraceFormatError(f"timestamps not strictly increasing at index {int(np.argmax(np.diff(ts) <= 0)) + 1}")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "rnti_count", counts)

    def __len__(self) -> int:
        return int(self.rnti_count.size)


@dataclass(frozen=True)
class DemandProfile:
    """Per-step demand fractions for both services. ``t0`` is the global index of step 0."""
    d_ran: np.ndarray
    d_ai: np.ndarray
    t0: int = 0

    def __post_init__(self):
        d_ran = np.asarray(self.d_ran, dtype=np.float64)
        d_ai = np.asarray(self.d_ai, dtype=np.float64)
        if d_ran.shape != d_ai.shape or d_ran.ndim != 1:
            raise ConfigError("demand channels must be 1-D and of equal length")
        for name, arr in (("d_ran", d_ran), ("d_ai", d_ai)):
            if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
                raise ConfigError(f"{name} must lie in [0, 1]")
        object.__setattr__(self, "d_ran", d_ran)
        object.__setattr__(self, "d_ai", d_ai)

    def __len__(self) -> int:
        return int(self.d_ran.size)

    def window(self, start: int, length: int) -> "DemandProfile":
        stop = min(start + length, len(self))
        return DemandProfile(self.d_ran[start:stop], self.d_ai[start:stop], self.t0 + start)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.d_ran.tobytes())
        h.update(self.d_ai.tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class WindowedDataset:
    inputs: np.ndarray  # (M, seq_len)
    targets: np.ndarray  # (M,)
    spike_labels: np.ndarray  # (M,) of 0.0 / 1.0

    def __len__(self) -> int:
        return int(self.targets.size)


# ---------------------------------------------------------------- file I/O
def _parse_time(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        pass
    iso = text.strip()
    if iso.endswith("Z"):
        iso = iso[:-1] + "+00:00"
    stamp = datetime.fromisoformat(iso)
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp.timestamp()


def load_trace(path: str | Path, source_label: str | None = None) -> TraceSeries:
    """Read a ``timestamp,rnti_count`` file.

    Malformed rows raise TraceFormatError naming the line. A single missing
    step (gap of exactly two cadences) is forward-filled; wider gaps are kept
    as-is with a warning.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"trace file not found: {path}")
    times: list[float] = []
    counts: list[int] = []
    with open(path, newline="") as fh:
        sample = fh.read(2048)
        fh.seek(0)
        delim = "\t" if "\t" in sample and "," not in sample else ("," if "," in sample else None)
        rows = csv.reader(fh, delimiter=delim) if delim else (line.split() for line in fh)
        for lineno, row in enumerate(rows, start=1):
            row = [c.strip() for c in row if c.strip() != ""]
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 2:
                raise TraceFormatError(f"{path}:{lineno}: expected 2 columns, got {len(row)}")
            try:
                ts = _parse_time(row[0])
            except ValueError:
                if lineno == 1 and not times:
                    continue  # header
                raise TraceFormatError(f"{path}:{lineno}: unparseable timestamp {row[0]!r}") from None
            try:
                value = float(row[1])
            except ValueError:
                raise TraceFormatError(f"{path}:{lineno}: unparseable count {row[1]!r}") from None
            if not math.isfinite(value) or value != int(value):
                raise TraceFormatError(f"{path}:{lineno}: count must be an integer, got {row[1]!r}")
            if value < 0:
                raise TraceFormatError(f"{path}:{lineno}: negative count {row[1]}")
            if times and ts <= times[-1]:
                raise TraceFormatError(f"{path}:{lineno}: timestamp not strictly increasing")
            times.append(ts)
            counts.append(int(value))
    if not times:
        raise TraceFormatError(f"{path}: no data rows")
    times, counts = _fill_single_gaps(times, counts, path)
    return TraceSeries(np.array(times), np.array(counts, dtype=np.int64),
                       source_label or path.stem)


def _fill_single_gaps(times, counts, path):
    if len(times) < 3:
        return times, counts
    cadence = float(np.median(np.diff(times)))
    out_t, out_c = [times[0]], [counts[0]]
    wide = 0
    for ts, c in zip(times[1:], counts[1:]):
        gap = ts - out_t[-1]
        if math.isclose(gap, 2 * cadence, rel_tol=1e-6):
            out_t.append(out_t[-1] + cadence)
            out_c.append(out_c[-1])
        elif gap > 2 * cadence * (1 + 1e-6):
            wide += 1
        out_t.append(ts)
        out_c.append(c)
    if wide:
        log.warning("%s: %d gaps wider than one step left unfilled", path, wide)
    return out_t, out_c


def write_trace(path: str | Path, series: TraceSeries) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write("timestamp,rnti_count\n")
        for ts, c in zip(series.timestamps, series.rnti_count):
            stamp = str(int(ts)) if float(ts).is_integer() else repr(float(ts))
            fh.write(f"{stamp},{int(c)}\n")
    return path


def export_profile(path: str | Path, profile: DemandProfile, labels: np.ndarray | None = None) -> Path:
    """Write ``t,d_ran,d_ai,spike_label`` rows for inspection."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if labels is None:
        labels = np.zeros(len(profile))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "d_ran", "d_ai", "spike_label"])
        for k in range(len(profile)):
            w.writerow([profile.t0 + k, repr(float(profile.d_ran[k])), repr(float(profile.d_ai[k])),
                        int(labels[k])])
    return path


# ----------------------------------------------------------- demand shaping
def normalize_ran_demand(counts, eps: float = NORM_EPS) -> np.ndarray:
    """Min-max scale to ``(x - min) / (max - min + eps)``, values in [0, 1)."""
    if isinstance(counts, TraceSeries):
        counts = counts.rnti_count
    x = np.asarray(counts, dtype=np.float64)
    if x.size == 0:
        raise ConfigError("cannot normalise an empty series")
    lo = x.min()
    return (x - lo) / (x.max() - lo + eps)


def ai_demand(N: int, horizon: int | None = None, t0: int = 0) -> np.ndarray:
    """Sinusoidal AI demand ``(sin(4 pi t / horizon) + 1) / 2`` for ``t = t0 .. t0+N-1``.

    ``horizon`` defaults to ``N``, giving two full oscillations over the run.
    """
    if N < 1:
        raise ConfigError("N must be >= 1")
    horizon = N if horizon is None else horizon
    t = np.arange(t0, t0 + N, dtype=np.float64)
    return np.clip((np.sin(4.0 * np.pi * t / horizon) + 1.0) / 2.0, 0.0, 1.0)


def build_profile(series: TraceSeries, ai_horizon: int = 100, eps: float = NORM_EPS) -> DemandProfile:
    d_ran = normalize_ran_demand(series.rnti_count, eps)
    return DemandProfile(d_ran, ai_demand(len(d_ran), ai_horizon))


def spike_threshold(train_values, percentile: float = 90.0) -> float:
    if not 0.0 < percentile < 100.0:
        raise ConfigError(f"percentile must lie in (0, 100), got {percentile}")
    x = np.asarray(train_values, dtype=np.float64)
    if x.size == 0:
        raise ConfigError("cannot label an empty series")
    return float(np.percentile(x, percentile))


def label_spikes(values, percentile: float = 90.0, threshold: float | None = None) -> np.ndarray:
    """``1.0`` where the value strictly exceeds the threshold.

    Pass ``threshold`` computed on the training split to label a test split;
    otherwise the percentile of ``values`` itself is used.
    """
    if threshold is None:
        threshold = spike_threshold(values, percentile)
    x = np.asarray(values, dtype=np.float64)
    return (x > threshold).astype(np.float64)


@dataclass
class Scaler:
    """Z-score transform fitted on a training split."""
    mean: float = 0.0
    std: float = 1.0
    eps: float = field(default=1e-8, repr=False)

    @classmethod
    def fit(cls, train, eps: float = 1e-8) -> "Scaler":
        x = np.asarray(train, dtype=np.float64)
        if x.size == 0:
            raise ConfigError("cannot fit a scaler on an empty series")
        return cls(float(x.mean()), float(max(x.std(), eps)), eps)

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean, "std": self.std}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(float(d["mean"]), float(d["std"]))


def standardize(train, apply_to=None) -> tuple[np.ndarray, Scaler]:
    scaler = Scaler.fit(train)
    return scaler.transform(train if apply_to is None else apply_to), scaler


def make_windows(values, labels=None, seq_len: int = 10) -> WindowedDataset:
    x = np.asarray(values, dtype=np.float64)
    if seq_len < 1:
        raise ConfigError("seq_len must be >= 1")
    if x.ndim != 1 or x.size <= seq_len:
        raise ConfigError(f"series of length {x.size} too short for windows of {seq_len}")
    y = np.zeros_like(x) if labels is None else np.asarray(labels, dtype=np.float64)
    if y.shape != x.shape:
        raise ConfigError("labels must align with values")
    m = x.size - seq_len
    idx = np.arange(m)[:, None] + np.arange(seq_len)[None, :]
    return WindowedDataset(x[idx], x[seq_len:].copy(), y[seq_len:].copy())


# -------------------------------------------------------------- synthesis
def _raised_cosine_surge(n: int, start: int, ramp: int, plateau: int, height: float) -> np.ndarray:
    out = np.zeros(n)
    up = 0.5 * (1.0 - np.cos(np.pi * np.arange(1, ramp + 1) / (ramp + 1)))
    shape = np.concatenate([up, np.ones(plateau), up[::-1]])
    stop = min(n, start + shape.size)
    out[start:stop] = height * shape[: stop - start]
    return out


def synth_trace(kind: str, N: int, seed: int, period: int = 96,
                cadence: int = SYNTH_CADENCE, start: int = SYNTH_START) -> TraceSeries:
    """Deterministic surrogate RNTI trace.

    * ``event-spike``: mild daily cycle plus one smooth surge per day
      (10-step ramps, 8 to 10 step plateau) well above the daily peak.
    * ``diurnal``: strong daily cycle with period ``period`` and small noise.
    * ``flat``: low-variance AR(1) noise around a fixed level.
    """
    if kind not in SYNTH_KINDS:
        raise ConfigError(f"unknown trace kind {kind!r}; expected one of {SYNTH_KINDS}")
    if N < 1:
        raise ConfigError("N must be >= 1")
    rng = stream(seed, f"synth:{kind}")
    t = np.arange(N, dtype=np.float64)
    daily = 0.5 * (1.0 - np.cos(2.0 * np.pi * t / period))
    if kind == "event-spike":
        x = 120.0 + 60.0 * daily + rng.normal(0.0, 6.0, N)
        ramp = 10
        for day_start in range(0, N, period):
            plateau = int(rng.integers(8, 11))
            height = float(rng.uniform(215.0, 235.0))
            span = 2 * ramp + plateau
            remaining = min(period, N - day_start)
            if day_start > 0 and remaining < span + 8:
                break
            latest = remaining - span
            onset = int(rng.integers(8, latest + 1)) if latest >= 8 else min(8, remaining - 1)
            x += _raised_cosine_surge(N, day_start + onset, ramp, plateau, height)
    elif kind == "diurnal":
        x = 100.0 + 200.0 * daily + rng.normal(0.0, 8.0, N)
    else:
        noise = rng.normal(0.0, 4.0, N)
        x = np.empty(N)
        level = 0.0
        for k in range(N):
            level = 0.9 * level + noise[k]
            x[k] = 150.0 + level
    counts = np.maximum(np.rint(x), 0).astype(np.int64)
    stamps = start + cadence * np.arange(N, dtype=np.float64)
    return TraceSeries(stamps, counts, f"synthetic-{kind}")
