"""The control loop: KPI channel -> forecast -> state -> policy -> constrained
allocation -> reward -> replay and SAC update.

Demand reaches the loop only through a :class:`KpiChannel`. The live channel
reads a demand profile and can record what it emits; the replay channel
re-reads such a recording, so a replayed run consumes byte-identical inputs.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
import sys
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .agent import ReplayBuffer, SACAgent
from .config import Config, RunConfig
from .environment import AiRanEnv
from .errors import ConfigError, NonFiniteError, TraceFormatError, TrainingDiverged
from .forecaster import SpikeAwareLSTM, composite_loss, prepare_data
from .metrics import EpisodeReport, assemble_report, completion_rate, episode_report, write_telemetry
from .nn import Adam, backward, file_digest
from .policies import POLICY_KINDS, make_policy
from .rng import RngStreams
from .traces import DemandProfile, TraceSeries, build_profile, load_trace, synth_trace

SYNTH_PERIOD = 96
HELD_OUT_SEED_OFFSET = 1000


# -------------------------------------------------------------------- KPIs
@dataclass(frozen=True)
class KpiMessage:
    """One monitoring record per control step."""
    t: int
    d_ran: float
    d_ai: float
    latency_proxy: float
    load_proxy: float

    @classmethod
    def observe(cls, t: int, d_ran: float, d_ai: float) -> "KpiMessage":
        # queueing-style latency indicator that grows as RAN load nears capacity
        latency = 1.0 / (1.0 - min(float(d_ran), 0.99))
        return cls(int(t), float(d_ran), float(d_ai), latency, float(d_ran) + float(d_ai))

    def to_line(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))


@dataclass(frozen=True)
class EpisodeFeed:
    """Messages for one episode: ``history`` precedes step 0 and only seeds forecasts."""
    history: tuple[KpiMessage, ...]
    steps: tuple[KpiMessage, ...]

    @property
    def t0(self) -> int:
        return self.steps[0].t

    def demands(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([m.d_ran for m in self.steps]), np.array([m.d_ai for m in self.steps]))

    def digest(self) -> str:
        d_ran, d_ai = self.demands()
        h = hashlib.sha256()
        h.update(d_ran.tobytes())
        h.update(d_ai.tobytes())
        return h.hexdigest()


class LiveKpiChannel:
    """Emits messages from demand profiles; optionally records them (JSON lines)."""

    def __init__(self, profiles: DemandProfile | Sequence[DemandProfile], record: str | Path | None = None):
        self.profiles = [profiles] if isinstance(profiles, DemandProfile) else list(profiles)
        self._fh = None
        self._episodes = 0
        if record is not None:
            Path(record).parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(record, "w")

    def episode(self, start: int, n: int, history: int = 0, profile: int = 0) -> EpisodeFeed:
        prof = self.profiles[profile]
        if start < 0 or start >= len(prof):
            raise ConfigError(f"episode start {start} outside profile of length {len(prof)}")
        stop = min(start + n, len(prof))
        h0 = max(0, start - history)
        msgs = [KpiMessage.observe(prof.t0 + k, prof.d_ran[k], prof.d_ai[k]) for k in range(h0, stop)]
        feed = EpisodeFeed(tuple(msgs[:start - h0]), tuple(msgs[start - h0:]))
        if self._fh is not None:
            head = {"episode": self._episodes, "profile": profile, "history": len(feed.history),
                    "steps": len(feed.steps)}
            self._fh.write(json.dumps(head, separators=(",", ":")) + "\n")
            for m in msgs:
                self._fh.write(m.to_line() + "\n")
            self._fh.flush()
        self._episodes += 1
        return feed

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


class ReplayKpiChannel:
    """Plays back a recording made by :class:`LiveKpiChannel`, block by block.

    Every block must carry consecutive step indices; gaps, repeats and
    reordering are rejected with the offending line number.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        if not self.path.exists():
            raise FileNotFoundError(f"KPI recording not found: {self.path}")
        self._blocks = self._parse()
        self._next = 0

    def _parse(self) -> list[EpisodeFeed]:
        lines = self.path.read_text().splitlines()
        blocks = []
        k = 0
        while k < len(lines):
            try:
                head = json.loads(lines[k])
                n_hist, n_steps = int(head["history"]), int(head["steps"])
            except (ValueError, KeyError, TypeError) as exc:
                raise TraceFormatError(f"{self.path}:{k + 1}: bad episode header ({exc})") from exc
            if n_steps < 1 or k + 1 + n_hist + n_steps > len(lines):
                raise TraceFormatError(f"{self.path}:{k + 1}: episode block truncated")
            msgs = []
            for j in range(k + 1, k + 1 + n_hist + n_steps):
                try:
                    rec = json.loads(lines[j])
                    msg = KpiMessage(int(rec["t"]), float(rec["d_ran"]), float(rec["d_ai"]),
                                     float(rec["latency_proxy"]), float(rec["load_proxy"]))
                except (ValueError, KeyError, TypeError) as exc:
                    raise TraceFormatError(f"{self.path}:{j + 1}: bad KPI record ({exc})") from exc
                if msgs and msg.t != msgs[-1].t + 1:
                    kind = "gap" if msg.t > msgs[-1].t + 1 else "out-of-order step"
                    raise TraceFormatError(f"{self.path}:{j + 1}: {kind} (t={msg.t} after t={msgs[-1].t})")
                msgs.append(msg)
            blocks.append(EpisodeFeed(tuple(msgs[:n_hist]), tuple(msgs[n_hist:])))
            k += 1 + n_hist + n_steps
        return blocks

    def episode(self, start: int, n: int, history: int = 0, profile: int = 0) -> EpisodeFeed:
        if self._next >= len(self._blocks):
            raise TraceFormatError(f"{self.path}: recording exhausted after {self._next} episodes")
        feed = self._blocks[self._next]
        self._next += 1
        return feed

    def close(self) -> None:
        pass


# ----------------------------------------------------------------- scenario
@dataclass
class Scenario:
    name: str
    train_series: list[TraceSeries]
    test_series: TraceSeries

    def train_profiles(self, ai_horizon: int) -> list[DemandProfile]:
        return [build_profile(s, ai_horizon) for s in self.train_series]

    def test_profile(self, ai_horizon: int) -> DemandProfile:
        return build_profile(self.test_series, ai_horizon)


def synthetic_scenario(kind: str, seed: int, train_days: int = 12, test_days: int = 2) -> Scenario:
    """Surrogate scenario: training days and a separately seeded held-out file."""
    train = synth_trace(kind, train_days * SYNTH_PERIOD, seed, period=SYNTH_PERIOD)
    test = synth_trace(kind, test_days * SYNTH_PERIOD, HELD_OUT_SEED_OFFSET + seed, period=SYNTH_PERIOD)
    return Scenario(kind, [train], test)


def load_scenario(run: RunConfig) -> Scenario:
    if run.train_traces:
        if run.test_trace is None:
            raise ConfigError("run.test_trace is required when run.train_traces is set")
        train = [load_trace(p) for p in run.train_traces]
        return Scenario(Path(run.train_traces[0]).stem, train, load_trace(run.test_trace))
    return synthetic_scenario(run.scenario, run.seed, run.train_days, run.test_days)


# ------------------------------------------------------------------ episode
@dataclass
class EpisodeResult:
    rows: list[dict]
    trace_hash: str
    reward_sum: float
    updates: int = 0
    critic_loss: float = math.nan
    actor_loss: float = math.nan


class ForecasterTuner:
    """Optional in-loop fine-tuning: one mini-batch Adam step on the training windows."""

    def __init__(self, model: SpikeAwareLSTM, series: Sequence[TraceSeries], rng: np.random.Generator):
        cfg = model.config
        self.model = model
        self.data = prepare_data(list(series), None, cfg.seq_len, cfg.spike_percentile).train
        self.rng = rng
        self.opt = Adam(model.params, cfg.lr)

    def step(self) -> float:
        cfg = self.model.config
        idx = self.rng.choice(len(self.data), size=min(cfg.batch_size, len(self.data)), replace=False)
        r, s = self.model.forward(self.data.inputs[idx], training=True, rng=self.rng)
        loss = composite_loss(r, self.data.targets[idx], s, self.data.spike_labels[idx], cfg.lambda_detect)
        backward(loss)
        self.opt.step()
        return loss.item()


class Learner:
    """SAC side of the loop: warm-up actions, replay writes and updates."""

    def __init__(self, agent: SACAgent, streams: RngStreams, bootstrap_on_timeout: bool = True,
                 tuner: ForecasterTuner | None = None, finetune_every: int = 0):
        cfg = agent.config
        self.agent = agent
        self.buffer = ReplayBuffer(cfg.buffer_capacity, agent.state_dim, cfg.action_dim)
        self.act_rng = streams["sac:act"]
        self.update_rng = streams["sac:update"]
        self.bootstrap_on_timeout = bootstrap_on_timeout
        self.tuner = tuner
        self.finetune_every = finetune_every
        self.total_steps = 0
        self.updated = False  # at least one SAC update has run
        self.reward_offset = 0.0  # running average of stored rewards (sac.center_rewards)
        self._centered = False

    def action(self, policy, state: np.ndarray) -> np.ndarray:
        if self.total_steps < self.agent.config.warmup_steps:
            return self.act_rng.uniform(-1.0, 1.0, self.agent.config.action_dim)
        return policy.act(state, self.act_rng, stochastic=True)

    def observe(self, s, a, r, s2, done: bool, truncated: bool) -> list:
        # a time-limit cut is not a terminal state, so it keeps the bootstrap term
        terminal = done and not (truncated and self.bootstrap_on_timeout)
        cfg = self.agent.config
        self.buffer.push(s, a, cfg.reward_scale * r, s2, terminal)
        self.total_steps += 1
        infos = []
        if self.total_steps >= cfg.warmup_steps and len(self.buffer) >= cfg.batch:
            if cfg.center_rewards:
                # starts at the warm-up mean, then tracks the current policy's average reward
                if self._centered:
                    self.reward_offset += cfg.center_rate * (cfg.reward_scale * r - self.reward_offset)
                else:
                    self.reward_offset = float(self.buffer.r[self.buffer.indices()].mean())
                    self._centered = True
            for _ in range(cfg.updates_per_step):
                infos.append(self.agent.update(self.buffer, self.update_rng, self.reward_offset))
            self.updated = self.updated or cfg.updates_per_step > 0
        if self.tuner is not None and self.finetune_every and self.total_steps % self.finetune_every == 0:
            self.tuner.step()
        return infos


def run_episode(env: AiRanEnv, policy, feed: EpisodeFeed, learner: Learner | None = None) -> EpisodeResult:
    """One pass over ``feed``; static policies never touch a buffer or an optimiser."""
    d_ran, d_ai = feed.demands()
    history = [m.d_ran for m in feed.history]
    state = env.reset(d_ran, d_ai, t0=feed.t0, initial_alloc=policy.initial_alloc(env.config.initial_alloc),
                      ran_history=history)
    rows = []
    total = 0.0
    c_losses, a_losses = [], []
    while True:
        if learner is not None:
            action = learner.action(policy, state)
        else:
            action = policy.act(state)
        out = env.step(action)
        rows.append(out.record)
        total += out.reward
        if learner is not None:
            for info in learner.observe(state, action, out.reward, out.state, out.done, out.truncated):
                c_losses.append(info.critic_loss)
                a_losses.append(info.actor_loss)
        state = out.state
        if out.done:
            break
    res = EpisodeResult(rows, feed.digest(), float(total), len(c_losses))
    if c_losses:
        res.critic_loss = float(np.mean(c_losses))
        res.actor_loss = float(np.mean(a_losses))
    return res


# ----------------------------------------------------------------- training
CURVE_COLUMNS = ("episode", "profile", "t0", "steps", "reward_sum", "reward_mean", "updates",
                 "critic_loss", "actor_loss", "completion_ran_pct", "completion_ai_pct", "val_reward",
                 "val_ran_pct", "val_adaptability")


@dataclass
class TrainResult:
    agent: SACAgent
    curves: list[dict]
    best_state: dict
    best_episode: int
    best_score: float
    checkpoints: dict = field(default_factory=dict)


def _episode_plan(rng: np.random.Generator, profiles: Sequence[DemandProfile], n: int) -> tuple[int, int, int]:
    k = int(rng.integers(len(profiles))) if len(profiles) > 1 else 0
    length = len(profiles[k])
    if length < n:
        warnings.warn(f"training profile has {length} steps < {n}; episodes truncate", RuntimeWarning)
        return k, 0, length
    return k, int(rng.integers(0, length - n + 1)), n


def validation_feeds(profiles: Sequence[DemandProfile], windows: int, n: int, history: int) -> list[EpisodeFeed]:
    """Fixed, evenly spaced windows of the training profiles for checkpoint selection."""
    channel = LiveKpiChannel(profiles)
    feeds = []
    for w in range(windows):
        k = w % len(profiles)
        length = len(profiles[k])
        slots = -(-windows // len(profiles))
        pos = w // len(profiles)
        start = int(round((pos + 0.5) * max(length - n, 0) / slots))
        feeds.append(channel.episode(start, min(n, length), history, profile=k))
    return feeds


def validation_score(env: AiRanEnv, policy, feeds: Sequence[EpisodeFeed]) -> EpisodeReport:
    """Report of the deterministic policy over all ``feeds`` pooled into one series."""
    rows = []
    for feed in feeds:
        rows += run_episode(env, policy, feed).rows
    return episode_report("validation", rows, env.config.R_max)


def train_agent(cfg: Config, scenario: Scenario, forecaster, out_dir: str | Path | None = None,
                record: str | Path | None = None, replay: str | Path | None = None,
                progress=None) -> TrainResult:
    """Run ``cfg.run.episodes`` training episodes at seeded random offsets."""
    run = cfg.run
    streams = RngStreams(run.seed)
    profiles = scenario.train_profiles(cfg.env.ai_horizon)
    env = AiRanEnv(cfg.env, forecaster)
    agent = SACAgent(cfg.env.state_dim, cfg.sac, streams["sac:init"])
    tuner = None
    if run.finetune_every and isinstance(forecaster, SpikeAwareLSTM):
        tuner = ForecasterTuner(forecaster, scenario.train_series, streams["forecaster:finetune"])
    learner = Learner(agent, streams, run.bootstrap_on_timeout, tuner, run.finetune_every)
    policy = make_policy("sac", cfg.env.v_max, agent)
    channel = ReplayKpiChannel(replay) if replay is not None else LiveKpiChannel(profiles, record)
    plan_rng = streams["orchestrator:episodes"]
    history = forecaster.config.seq_len - 1 if forecaster is not None else 0
    out = Path(out_dir) if out_dir is not None else None
    val_feeds, val_env = [], None
    if run.validate_every:
        val_feeds = validation_feeds(profiles, run.validate_windows, cfg.env.steps_per_episode, history)
        val_env = AiRanEnv(cfg.env, forecaster)

    curves: list[dict] = []
    best_state, best_episode, best_score = agent.state_dict(), -1, -math.inf
    best_key = (False, -math.inf)
    last_good = agent.state_dict()
    try:
        for ep in range(run.episodes):
            k, start, n = _episode_plan(plan_rng, profiles, cfg.env.steps_per_episode)
            feed = channel.episode(start, n, history, profile=k)
            try:
                res = run_episode(env, policy, feed, learner)
            except NonFiniteError as exc:
                if out is not None:
                    agent.load_state_dict(last_good)
                    agent.save(out / "sac_last_good.npz", {"episode": ep - 1})
                raise TrainingDiverged(f"SAC training diverged in episode {ep}: {exc}") from exc
            d = np.array([[r["c_ran"], r["d_ran"], r["c_ai"], r["d_ai"]] for r in res.rows])
            row = {"episode": ep, "profile": k, "t0": feed.t0, "steps": len(res.rows),
                   "reward_sum": res.reward_sum, "reward_mean": res.reward_sum / len(res.rows),
                   "updates": res.updates, "critic_loss": res.critic_loss, "actor_loss": res.actor_loss,
                   "completion_ran_pct": completion_rate(d[:, 0], d[:, 1]),
                   "completion_ai_pct": completion_rate(d[:, 2], d[:, 3]), "val_reward": math.nan,
                   "val_ran_pct": math.nan, "val_adaptability": math.nan}
            last_good = agent.state_dict()
            if learner.updated:
                # best = highest validation metric among passes meeting the RAN floor (any pass if
                # none does), or highest training-episode reward without validation
                key = None
                if not run.validate_every:
                    key = (True, row["reward_mean"])
                elif (ep + 1) % run.validate_every == 0 or ep == run.episodes - 1:
                    rep = validation_score(val_env, policy, val_feeds)
                    row.update(val_reward=rep.mean_reward, val_ran_pct=rep.completion_ran_pct,
                               val_adaptability=rep.adaptability)
                    metric = rep.adaptability if run.select_metric == "adaptability" else rep.mean_reward
                    key = (rep.completion_ran_pct >= run.select_ran_floor, metric)
                if key is not None and key > best_key:
                    best_key = key
                    best_state, best_episode, best_score = last_good, ep, key[1]
            curves.append(row)
            if progress is not None:
                progress(row)
    finally:
        channel.close()
    if best_episode < 0:
        best_state, best_episode = agent.state_dict(), run.episodes - 1
        best_score = curves[-1]["reward_mean"]
    result = TrainResult(agent, curves, best_state, best_episode, best_score)
    if out is not None:
        result.checkpoints = save_training_outputs(out, result)
    return result


def save_training_outputs(out: Path, result: TrainResult) -> dict[str, Path]:
    out.mkdir(parents=True, exist_ok=True)
    write_curves(out / "curves.csv", result.curves)
    final = result.agent.save(out / "sac_final.npz", {"which": "final", "episodes": len(result.curves)})
    current = result.agent.state_dict()
    result.agent.load_state_dict(result.best_state)
    best = result.agent.save(out / "sac_best.npz", {"which": "best", "episode": result.best_episode,
                                                    "score": result.best_score})
    result.agent.load_state_dict(current)
    return {"sac_final": final, "sac_best": best}


def write_curves(path: str | Path, curves: Sequence[dict]) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CURVE_COLUMNS)
        for row in curves:
            w.writerow([repr(float(row[k])) if isinstance(row[k], (float, np.floating)) else row[k]
                        for k in CURVE_COLUMNS])
    return path


def read_curves(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [{k: (float(v) if k not in ("episode", "profile", "t0", "steps", "updates") else int(v))
                 for k, v in rec.items()} for rec in reader]


# --------------------------------------------------------------- evaluation
@dataclass
class EvalResult:
    reports: list[EpisodeReport]
    rows: dict[str, list[dict]]
    summary: dict
    table: str


def evaluate_policies(cfg: Config, scenario: Scenario, forecaster, agent: SACAgent | None = None,
                      policies: Sequence[str] = POLICY_KINDS, out_dir: str | Path | None = None,
                      record: str | Path | None = None, replay: str | Path | None = None) -> EvalResult:
    """Run each policy once over the held-out profile from step 0 (deterministic actions)."""
    profile = scenario.test_profile(cfg.env.ai_horizon)
    n = cfg.env.steps_per_episode
    if len(profile) < n:
        warnings.warn(f"held-out profile has {len(profile)} steps < {n}; evaluation truncates", RuntimeWarning)
    channel = ReplayKpiChannel(replay) if replay is not None else LiveKpiChannel(profile, record)
    reports, rows = [], {}
    try:
        for kind in policies:
            if kind == "sac" and agent is None:
                raise ConfigError("evaluating the sac policy needs a trained agent checkpoint")
            policy = make_policy(kind, cfg.env.v_max, agent)
            env = AiRanEnv(cfg.env, forecaster)
            res = run_episode(env, policy, channel.episode(0, n, 0))
            rows[kind] = res.rows
            reports.append(episode_report(kind, res.rows, cfg.env.R_max, res.trace_hash))
    finally:
        channel.close()
    summary, table = assemble_report(reports)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for kind, r in rows.items():
            write_telemetry(out / f"telemetry_{kind}.csv", r)
        (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        (out / "comparison.txt").write_text(table + "\n")
    return EvalResult(reports, rows, summary, table)


# ----------------------------------------------------------------- manifest
def write_manifest(out_dir: str | Path, cfg: Config, command: str, traces: dict[str, str] | None = None,
                   artifacts: dict[str, str | Path] | None = None, extra: dict | None = None) -> Path:
    """Everything needed to reproduce a run: resolved config and its hash, seed, input and output digests."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": command,
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "argv": sys.argv,
        "seed": cfg.run.seed,
        "config_hash": cfg.digest(),
        "config": cfg.to_dict(),
        "traces": dict(traces or {}),
        "artifacts": {k: {"path": str(v), "sha256": file_digest(v)} for k, v in (artifacts or {}).items()},
    }
    doc.update(extra or {})
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def series_digest(series: TraceSeries) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(series.timestamps, dtype=np.float64).tobytes())
    h.update(np.asarray(series.rnti_count, dtype=np.int64).tobytes())
    return h.hexdigest()
