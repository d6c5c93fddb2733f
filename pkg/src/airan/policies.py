"""Allocation policies behind one interface: the learned SAC actor and the
two static splits it is compared against.

A policy maps the flat state vector to a normalised action in ``[-1, 1]^2``;
the environment scales it by ``v_max`` and enforces every constraint.
"""
from __future__ import annotations

from typing import Protocol

import numpy as np

from .errors import ConfigError

POLICY_KINDS = ("sac", "balanced", "ran_priority")
BALANCED_TARGET = (0.5, 0.5)
RAN_PRIORITY_TARGET = (0.7, 0.3)


class Policy(Protocol):
    name: str
    learns: bool

    def act(self, state: np.ndarray, rng: np.random.Generator | None = None,
            stochastic: bool = False) -> np.ndarray: ...

    def initial_alloc(self, default: tuple[float, float]) -> tuple[float, float]: ...


def move_toward(state: np.ndarray, target, v_max: float) -> np.ndarray:
    """Normalised action that steps ``r_prev`` (last two state entries) toward ``target``."""
    s = np.asarray(state, dtype=np.float64)
    gap = np.asarray(target, dtype=np.float64) - s[-2:]
    return np.clip(gap / v_max, -1.0, 1.0)


def balanced_action(state: np.ndarray, v_max: float) -> np.ndarray:
    return move_toward(state, BALANCED_TARGET, v_max)


def ran_priority_action(state: np.ndarray, v_max: float) -> np.ndarray:
    return move_toward(state, RAN_PRIORITY_TARGET, v_max)


class StaticPolicy:
    """Fixed split of capacity; starts each episode already at its target."""

    learns = False

    def __init__(self, name: str, target: tuple[float, float], v_max: float):
        self.name = name
        self.target = (float(target[0]), float(target[1]))
        self.v_max = float(v_max)

    def act(self, state, rng=None, stochastic: bool = False) -> np.ndarray:
        return move_toward(state, self.target, self.v_max)

    def initial_alloc(self, default):
        return self.target


class SACPolicy:
    """Wraps a :class:`~airan.agent.SACAgent`; stochastic while training."""

    name = "sac"
    learns = True

    def __init__(self, agent):
        self.agent = agent

    def act(self, state, rng=None, stochastic: bool = False) -> np.ndarray:
        return self.agent.act(state, stochastic, rng)

    def initial_alloc(self, default):
        return default


def make_policy(kind: str, v_max: float, agent=None):
    if kind == "balanced":
        return StaticPolicy("balanced", BALANCED_TARGET, v_max)
    if kind == "ran_priority":
        return StaticPolicy("ran_priority", RAN_PRIORITY_TARGET, v_max)
    if kind == "sac":
        if agent is None:
            raise ConfigError("the sac policy needs a trained agent")
        return SACPolicy(agent)
    raise ConfigError(f"unknown policy {kind!r}; expected one of {', '.join(POLICY_KINDS)}")
