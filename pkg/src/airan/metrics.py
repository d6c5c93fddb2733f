"""Episode metrics and the cross-policy comparison report.

Every number is computed from the per-step telemetry rows alone, so a
report can be recomputed from the telemetry files it ships with.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .environment import TELEMETRY_COLUMNS
from .errors import ConfigError, TraceFormatError
from .policies import POLICY_KINDS

INT_COLUMNS = ("t", "mig_ran", "mig_ai")


def completion_rate(completed: Sequence[float], demand: Sequence[float]) -> float:
    """``100 * sum(C) / sum(d)``; zero total demand counts as fully met."""
    c = np.asarray(completed, dtype=np.float64)
    d = np.asarray(demand, dtype=np.float64)
    if c.shape != d.shape:
        raise ConfigError(f"completion_rate: length mismatch {c.shape} vs {d.shape}")
    total = float(d.sum())
    if total <= 0.0:
        return 100.0
    return 100.0 * (float(c.sum()) / total)


def ideal_ratio(d_ran, d_ai) -> np.ndarray:
    """Demand-proportional RAN share ``d_ran / (d_ran + d_ai)``; 0.5 when both are zero."""
    return _share(d_ran, d_ai)


def allocation_ratio(r_ran, r_ai) -> np.ndarray:
    return _share(r_ran, r_ai)


def _share(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    tot = a + b
    safe = np.where(tot > 0.0, tot, 1.0)
    return np.where(tot > 0.0, a / safe, 0.5)


def adaptability(alpha_star, alpha) -> float:
    """``1 - mean_t |alpha*_t - alpha_t|``."""
    a_star = np.asarray(alpha_star, dtype=np.float64)
    a = np.asarray(alpha, dtype=np.float64)
    if a_star.shape != a.shape or a.size < 1:
        raise ConfigError(f"adaptability: need equal non-empty series, got {a_star.shape} and {a.shape}")
    return 1.0 - float(np.mean(np.abs(a_star - a)))


def utilization(mig_ran, mig_ai, R_max: int) -> float:
    """``100 * mean_t (mig_ran + mig_ai) / R_max``."""
    m = np.asarray(mig_ran, dtype=np.float64) + np.asarray(mig_ai, dtype=np.float64)
    if m.size < 1:
        raise ConfigError("utilization: empty series")
    return 100.0 * float(m.mean()) / R_max


def spike_window(d_ran, percentile: float = 90.0) -> np.ndarray:
    """Steps whose RAN demand exceeds the episode's own percentile."""
    d = np.asarray(d_ran, dtype=np.float64)
    return d > np.percentile(d, percentile)


@dataclass(frozen=True)
class EpisodeReport:
    policy: str
    steps: int
    completion_ran_pct: float
    completion_ai_pct: float
    adaptability: float
    mean_reward: float
    utilization_pct: float
    # proxy for proactive efficiency: RAN completion over the episode's top-decile demand steps
    spike_completion_ran_pct: float
    zero_demand_ran: bool
    zero_demand_ai: bool
    trace_hash: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _column(rows: Sequence[dict], key: str) -> np.ndarray:
    return np.array([row[key] for row in rows], dtype=np.float64)


def episode_report(policy: str, rows: Sequence[dict], R_max: int, trace_hash: str = "") -> EpisodeReport:
    if not rows:
        raise ConfigError("episode_report: no telemetry rows")
    col = {k: _column(rows, k) for k in ("d_ran", "d_ai", "r_ran", "r_ai", "c_ran", "c_ai",
                                         "mig_ran", "mig_ai", "reward")}
    zero_ran = float(col["d_ran"].sum()) <= 0.0
    zero_ai = float(col["d_ai"].sum()) <= 0.0
    for name, flag in (("RAN", zero_ran), ("AI", zero_ai)):
        if flag:
            warnings.warn(f"{policy}: zero total {name} demand; completion reported as 100%", RuntimeWarning)
    win = spike_window(col["d_ran"])
    spike_pct = completion_rate(col["c_ran"][win], col["d_ran"][win]) if win.any() else 100.0
    return EpisodeReport(
        policy=policy,
        steps=len(rows),
        completion_ran_pct=completion_rate(col["c_ran"], col["d_ran"]),
        completion_ai_pct=completion_rate(col["c_ai"], col["d_ai"]),
        adaptability=adaptability(ideal_ratio(col["d_ran"], col["d_ai"]), allocation_ratio(col["r_ran"], col["r_ai"])),
        mean_reward=float(col["reward"].mean()),
        utilization_pct=utilization(col["mig_ran"], col["mig_ai"], R_max),
        spike_completion_ran_pct=spike_pct,
        zero_demand_ran=zero_ran,
        zero_demand_ai=zero_ai,
        trace_hash=trace_hash,
    )


def _order_key(name: str) -> tuple[int, str]:
    return (POLICY_KINDS.index(name), name) if name in POLICY_KINDS else (len(POLICY_KINDS), name)


TABLE_COLUMNS = (("policy", "{}"), ("completion_ran_pct", "{:.2f}"), ("completion_ai_pct", "{:.2f}"),
                 ("adaptability", "{:.4f}"), ("utilization_pct", "{:.2f}"), ("spike_completion_ran_pct", "{:.2f}"),
                 ("mean_reward", "{:.4f}"))


def assemble_report(reports: Iterable[EpisodeReport]) -> tuple[dict, str]:
    """Machine-readable summary plus a fixed-order text table (sac, balanced, ran_priority)."""
    ordered = sorted(reports, key=lambda r: _order_key(r.policy))
    if not ordered:
        raise ConfigError("assemble_report: no policy runs")
    hashes = {r.trace_hash for r in ordered}
    if len(hashes) > 1:
        raise ConfigError(f"policies were evaluated on different demand sequences: {sorted(hashes)}")
    summary = {"trace_hash": ordered[0].trace_hash, "policies": [r.to_dict() for r in ordered]}
    header = [name for name, _ in TABLE_COLUMNS]
    body = [[fmt.format(getattr(r, name)) for name, fmt in TABLE_COLUMNS] for r in ordered]
    widths = [max(len(h), *(len(row[k]) for row in body)) for k, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in body]
    return summary, "\n".join(lines)


# ------------------------------------------------------------- telemetry
def write_telemetry(path: str | Path, rows: Sequence[dict]) -> Path:
    """Comma-separated per-step log; floats written with ``repr`` so they read back exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TELEMETRY_COLUMNS)
        for row in rows:
            w.writerow([int(row[k]) if k in INT_COLUMNS else repr(float(row[k])) for k in TELEMETRY_COLUMNS])
    return path


def read_telemetry(path: str | Path) -> list[dict]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != TELEMETRY_COLUMNS:
            raise TraceFormatError(f"{path}: unexpected telemetry header {header}")
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(TELEMETRY_COLUMNS):
                raise TraceFormatError(f"{path}:{lineno}: expected {len(TELEMETRY_COLUMNS)} fields")
            row = {}
            for k, v in zip(TELEMETRY_COLUMNS, rec):
                val = float(v)
                if not math.isfinite(val):
                    raise TraceFormatError(f"{path}:{lineno}: non-finite {k}")
                row[k] = int(val) if k in INT_COLUMNS else val
            rows.append(row)
    return rows
