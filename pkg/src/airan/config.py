"""Nested run configuration: file loading, ``section.key=value`` overrides,
canonical hashing and the key listing shown by ``--help``.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .agent import SACConfig
from .environment import EnvConfig
from .errors import ConfigError
from .forecaster import ForecasterConfig
from .policies import POLICY_KINDS
from .traces import SYNTH_KINDS

try:  # python >= 3.11
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    tomllib = None


@dataclass
class RunConfig:
    scenario: str = "event-spike"  # synthetic kind used when no trace files are given
    train_traces: tuple[str, ...] = ()
    test_trace: str | None = None
    train_days: int = 12
    test_days: int = 2
    policy: str = "all"  # policies compared by evaluate
    episodes: int = 1000
    seed: int = 0
    forecaster_checkpoint: str | None = None
    agent_checkpoint: str | None = None
    eval_checkpoint: str = "best"  # "final" or "best"
    validate_every: int = 10  # episodes between validation passes that pick the best checkpoint; 0 = off
    validate_windows: int = 8  # fixed training-trace windows per validation pass
    select_metric: str = "adaptability"  # "adaptability" or "reward" ranks validated checkpoints
    select_ran_floor: float = 95.0  # validation RAN completion (%) a best checkpoint should reach
    bootstrap_on_timeout: bool = True
    finetune_every: int = 0  # forecaster fine-tuning cadence in env steps; 0 = off
    out_dir: str = "runs/default"

    def __post_init__(self):
        self.train_traces = tuple(str(p) for p in self.train_traces)
        if self.episodes < 1:
            raise ConfigError("run.episodes must be >= 1")
        if self.train_days < 1 or self.test_days < 1:
            raise ConfigError("run.train_days and test_days must be >= 1")
        if self.scenario not in SYNTH_KINDS:
            raise ConfigError(f"run.scenario must be one of {', '.join(SYNTH_KINDS)}")
        if self.policy not in POLICY_KINDS + ("all",):
            raise ConfigError(f"run.policy must be one of {', '.join(POLICY_KINDS)} or 'all'")
        if self.eval_checkpoint not in ("final", "best"):
            raise ConfigError("run.eval_checkpoint must be 'final' or 'best'")
        if self.validate_every < 0 or self.validate_windows < 1:
            raise ConfigError("run.validate_every must be >= 0 and run.validate_windows >= 1")
        if self.select_metric not in ("adaptability", "reward"):
            raise ConfigError("run.select_metric must be 'adaptability' or 'reward'")
        if not 0.0 <= self.select_ran_floor <= 100.0:
            raise ConfigError("run.select_ran_floor must be in [0, 100]")
        if self.finetune_every < 0:
            raise ConfigError("run.finetune_every must be >= 0")


SECTIONS = {"env": EnvConfig, "sac": SACConfig, "forecaster": ForecasterConfig, "run": RunConfig}

# keys whose defaults are values stated for the published method
PUBLISHED = {
    "env.R_max", "env.kappa", "env.beta_fut", "env.steps_per_episode",
    "sac.gamma", "sac.tau", "sac.actor_lr", "sac.critic_lr", "sac.buffer_capacity",
    "sac.hidden", "sac.batch",
    "forecaster.hidden", "forecaster.dropout", "forecaster.seq_len", "forecaster.batch_size",
    "forecaster.epochs", "forecaster.lr", "forecaster.spike_percentile", "forecaster.layer_norm",
    "run.episodes",
}


@dataclass
class Config:
    env: EnvConfig = field(default_factory=EnvConfig)
    sac: SACConfig = field(default_factory=SACConfig)
    forecaster: ForecasterConfig = field(default_factory=ForecasterConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def to_dict(self) -> dict:
        return {name: _plain(dataclasses.asdict(getattr(self, name))) for name in SECTIONS}

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def _coerce(section: str, key: str, default, value):
    """Convert ``value`` (from JSON/TOML or a ``--set`` string) to the default's type."""
    where = f"{section}.{key}"
    if isinstance(value, str) and not isinstance(default, str):
        text = value.strip()
        if default is None and text.lower() in ("none", "null", ""):
            return None
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            if default is not None:
                raise ConfigError(f"{where}: cannot parse {value!r}") from None
            return text
    if default is None:
        return tuple(value) if isinstance(value, list) else value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or float(value) != int(value):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"{where}: expected a finite number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return tuple(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _defaults(cls) -> dict[str, Any]:
    return {f.name: getattr(cls(), f.name) if f.default is dataclasses.MISSING else f.default
            for f in dataclasses.fields(cls)}


def build_config(doc: dict | None = None, overrides: Iterable[str] = ()) -> Config:
    """Resolve a nested document plus ``section.key=value`` overrides; unknown keys are errors."""
    if not isinstance(doc or {}, dict):
        raise ConfigError("configuration must be a mapping of sections")
    sections = {}
    for k, v in (doc or {}).items():
        if k not in SECTIONS:
            raise ConfigError(f"unknown config section {k!r}; expected one of {', '.join(SECTIONS)}")
        if not isinstance(v, dict):
            raise ConfigError(f"config section {k!r} must be a mapping")
        sections[k] = dict(v)
    doc = sections
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        path, value = item.split("=", 1)
        section, key = path.split(".", 1)
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        doc.setdefault(section, {})[key] = value
    built = {}
    for section, cls in SECTIONS.items():
        defaults = _defaults(cls)
        given = doc.get(section, {})
        unknown = sorted(set(given) - set(defaults))
        if unknown:
            raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")
        kwargs = {k: _coerce(section, k, defaults[k], v) for k, v in given.items()}
        try:
            built[section] = cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"[{section}]: {exc}") from exc
    return Config(**built)


def load_config(path: str | Path | None = None, overrides: Iterable[str] = ()) -> Config:
    doc: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        text = path.read_text()
        try:
            if path.suffix == ".toml":
                if tomllib is None:
                    raise ConfigError("TOML config needs Python >= 3.11; use JSON instead")
                doc = tomllib.loads(text)
            else:
                doc = json.loads(text)
        except (json.JSONDecodeError, ValueError) as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping of sections")
    return build_config(doc, overrides)


def describe_keys() -> str:
    """One line per key: ``section.key = default`` plus a ``[published]`` marker."""
    lines = []
    for section, cls in SECTIONS.items():
        for key, default in _defaults(cls).items():
            name = f"{section}.{key}"
            mark = "  [published]" if name in PUBLISHED else ""
            lines.append(f"  {name} = {json.dumps(_plain(default))}{mark}")
    return "\n".join(lines)
