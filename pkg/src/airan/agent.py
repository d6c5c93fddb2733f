"""Soft Actor-Critic: squashed-Gaussian actor, twin critics with soft targets,
and a bounded FIFO replay buffer.

Actions live in ``[-1, 1]^A``; the environment scales them to ``+-v_max``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import nn
from .errors import ConfigError, NonFiniteError
from .nn import ops

LOG_2PI = math.log(2.0 * math.pi)
LOG_2 = math.log(2.0)


@dataclass
class SACConfig:
    gamma: float = 0.99
    tau: float = 0.005
    alpha: float = 0.01  # the published 0.2 outweighs this reward's per-step differences
    reward_scale: float = 1.0  # multiplies rewards entering the replay buffer
    actor_lr: float = 3e-4
    critic_lr: float = 3e-4
    buffer_capacity: int = 100_000
    hidden: int = 128
    batch: int = 64
    action_dim: int = 2
    warmup_steps: int = 1000
    updates_per_step: int = 1
    center_rewards: bool = True  # learn from rewards minus a running average reward
    center_rate: float = 1e-4  # step size of that running average
    entropy_in_target: bool = True
    log_std_min: float = -20.0
    log_std_max: float = 2.0
    actor_last_scale: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("sac.gamma must lie in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("sac.tau must lie in (0, 1]")
        if self.alpha < 0:
            raise ConfigError("sac.alpha must be >= 0")
        if not (self.reward_scale > 0 and math.isfinite(self.reward_scale)):
            raise ConfigError("sac.reward_scale must be a finite number > 0")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            raise ConfigError("sac learning rates must be > 0")
        if self.batch < 1 or self.buffer_capacity < self.batch:
            raise ConfigError("sac.batch must be >= 1 and <= buffer_capacity")
        if self.hidden < 1 or self.action_dim < 1:
            raise ConfigError("sac.hidden and action_dim must be >= 1")
        if not 0.0 < self.center_rate <= 1.0:
            raise ConfigError("sac.center_rate must lie in (0, 1]")
        if self.warmup_steps < 0 or self.updates_per_step < 0:
            raise ConfigError("sac.warmup_steps and updates_per_step must be >= 0")
        if self.log_std_min >= self.log_std_max:
            raise ConfigError("sac.log_std_min must be < log_std_max")

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------ buffer
@dataclass(frozen=True)
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring of ``(s, a, r, s', done)``; the oldest entry goes first."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise ConfigError("buffer capacity must be >= 1")
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, state_dim))
        self.a = np.zeros((capacity, action_dim))
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, state_dim))
        self.done = np.zeros(capacity)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def push(self, s, a, r, s2, done) -> None:
        s = np.asarray(s, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        s2 = np.asarray(s2, dtype=np.float64)
        r = float(r)
        if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a)) and np.all(np.isfinite(s2)) and math.isfinite(r)):
            raise NonFiniteError(f"non-finite transition rejected (reward={r!r})")
        k = self._next
        self.s[k], self.a[k], self.r[k], self.s2[k], self.done[k] = s, a, r, s2, float(done)
        self._next = (k + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def indices(self) -> np.ndarray:
        """Storage slots in insertion order, oldest first."""
        if self._size < self.capacity:
            return np.arange(self._size)
        return (np.arange(self.capacity) + self._next) % self.capacity

    def sample(self, batch: int, rng: np.random.Generator) -> Batch:
        """Uniform mini-batch without replacement."""
        if batch > self._size:
            raise ConfigError(f"cannot sample {batch} from {self._size} transitions")
        idx = rng.choice(self._size, size=batch, replace=False)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx])


# ------------------------------------------------------------ distribution
def squashed_log_prob(u: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    """``log pi(tanh(u))`` for a diagonal Gaussian pre-squash sample ``u``.

    ``log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u))`` keeps the Jacobian
    term finite for saturated samples.
    """
    z = (u - mean) / np.exp(log_std)
    gauss = -0.5 * z * z - log_std - 0.5 * LOG_2PI
    jac = 2.0 * (LOG_2 - u - np.logaddexp(0.0, -2.0 * u))
    return (gauss - jac).sum(axis=-1)


def soft_target(r, gamma: float, done, min_q_next, alpha: float = 0.0, log_pi_next=0.0):
    """``r + gamma (1 - done) (min_q_next - alpha * log_pi_next)``."""
    return r + gamma * (1.0 - done) * (min_q_next - alpha * log_pi_next)


# ------------------------------------------------------------------- agent
@dataclass
class UpdateInfo:
    critic_loss: float
    actor_loss: float
    mean_q: float
    mean_log_pi: float


class SACAgent:
    """Actor ``S -> hidden -> hidden -> 2A`` (mean, log-std) and critics ``S+A -> hidden -> hidden -> 1``."""

    def __init__(self, state_dim: int, config: SACConfig | None = None, rng: np.random.Generator | None = None):
        self.config = config or SACConfig()
        cfg = self.config
        rng = rng if rng is not None else np.random.default_rng(0)
        self.state_dim = int(state_dim)
        A, Hd = cfg.action_dim, cfg.hidden
        self.actor_params = nn.ParamStore()
        self.actor = nn.MLP(self.actor_params, "actor", (state_dim, Hd, Hd, 2 * A), rng, cfg.actor_last_scale)
        self.critic_params = nn.ParamStore()
        self.q1 = nn.MLP(self.critic_params, "q1", (state_dim + A, Hd, Hd, 1), rng)
        self.q2 = nn.MLP(self.critic_params, "q2", (state_dim + A, Hd, Hd, 1), rng)
        self.target_params = nn.ParamStore()
        self.q1_target = nn.MLP(self.target_params, "q1", (state_dim + A, Hd, Hd, 1), rng)
        self.q2_target = nn.MLP(self.target_params, "q2", (state_dim + A, Hd, Hd, 1), rng)
        self.target_params.copy_from(self.critic_params)
        self.actor_opt = nn.Adam(self.actor_params, cfg.actor_lr)
        self.critic_opt = nn.Adam(self.critic_params, cfg.critic_lr)
        self.updates = 0

    # ----------------------------------------------------------- acting
    def _heads_np(self, s: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        out = self.actor.forward_np(s)
        A = self.config.action_dim
        return out[..., :A], np.clip(out[..., A:], self.config.log_std_min, self.config.log_std_max)

    def act(self, state, stochastic: bool = True, rng: np.random.Generator | None = None) -> np.ndarray:
        """Action in ``[-1, 1]^A``; deterministic mode returns ``tanh(mean)``."""
        s = np.asarray(state, dtype=np.float64)
        mean, log_std = self._heads_np(s)
        if not stochastic:
            return np.tanh(mean)
        if rng is None:
            raise ConfigError("stochastic act() needs an rng")
        return np.tanh(mean + np.exp(log_std) * rng.standard_normal(mean.shape))

    def sample_np(self, s: np.ndarray, noise: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Reparameterised sample and its log-probability, without the tape."""
        mean, log_std = self._heads_np(s)
        u = mean + np.exp(log_std) * noise
        return np.tanh(u), squashed_log_prob(u, mean, log_std)

    # ------------------------------------------------------------ losses
    def target_values(self, batch: Batch, noise: np.ndarray) -> np.ndarray:
        """``y = r + gamma (1 - done) (min_j Q'_j(s', a') - alpha log pi(a'|s'))``."""
        cfg = self.config
        a2, logp2 = self.sample_np(batch.s2, noise)
        sa2 = np.concatenate([batch.s2, a2], axis=1)
        q_next = np.minimum(self.q1_target.forward_np(sa2), self.q2_target.forward_np(sa2))[:, 0]
        alpha = cfg.alpha if cfg.entropy_in_target else 0.0
        return soft_target(batch.r, cfg.gamma, batch.done, q_next, alpha, logp2)

    def critic_loss(self, batch: Batch, y: np.ndarray) -> nn.Tensor:
        sa = np.concatenate([batch.s, batch.a], axis=1)
        target = y[:, None]
        return ops.mse(self.q1(sa), target) + ops.mse(self.q2(sa), target)

    def actor_loss(self, s: np.ndarray, noise: np.ndarray) -> tuple[nn.Tensor, np.ndarray, np.ndarray]:
        """``mean(alpha log pi(a|s) - min_j Q_j(s, a))`` with ``a`` reparameterised."""
        cfg = self.config
        A = cfg.action_dim
        out = self.actor(s)
        mean = out[:, :A]
        log_std = ops.clip(out[:, A:], cfg.log_std_min, cfg.log_std_max)
        u = mean + ops.exp(log_std) * noise
        a = ops.tanh(u)
        # (u - mean) / std is the injected noise, so the quadratic term is a constant
        gauss_const = (0.5 * noise * noise + 0.5 * LOG_2PI).sum(axis=1)
        jac = 2.0 * (LOG_2 - u - ops.softplus(-2.0 * u))
        log_pi = (-log_std - jac).sum(axis=1) - gauss_const
        sa = nn.concat([nn.as_tensor(s), a], axis=1)
        q = ops.minimum(self.q1(sa), self.q2(sa))[:, 0]
        loss = (cfg.alpha * log_pi - q).mean()
        return loss, q.data, log_pi.data

    # ------------------------------------------------------------ update
    def update(self, buffer: ReplayBuffer, rng: np.random.Generator,
               reward_offset: float = 0.0) -> UpdateInfo | None:
        """One critic and actor step on a mini-batch whose rewards are shifted by ``-reward_offset``."""
        cfg = self.config
        if len(buffer) < cfg.batch:
            warnings.warn(f"SAC update skipped: {len(buffer)} transitions < batch {cfg.batch}", RuntimeWarning)
            return None
        batch = buffer.sample(cfg.batch, rng)
        if reward_offset:
            batch = replace(batch, r=batch.r - reward_offset)
        A = cfg.action_dim
        y = self.target_values(batch, rng.standard_normal((cfg.batch, A)))

        c_loss = self.critic_loss(batch, y)
        nn.backward(c_loss)
        self.critic_opt.step()

        with self.critic_params.frozen():
            a_loss, q, log_pi = self.actor_loss(batch.s, rng.standard_normal((cfg.batch, A)))
        nn.backward(a_loss)
        self.actor_opt.step()

        self.target_params.soft_update(self.critic_params, cfg.tau)
        self.updates += 1
        info = UpdateInfo(c_loss.item(), a_loss.item(), float(q.mean()), float(log_pi.mean()))
        if not (math.isfinite(info.critic_loss) and math.isfinite(info.actor_loss)):
            raise NonFiniteError(f"SAC losses became non-finite at update {self.updates}")
        return info

    # ------------------------------------------------------- persistence
    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"actor/{k}": v for k, v in self.actor_params.state_dict().items()}
        out.update({f"critic/{k}": v for k, v in self.critic_params.state_dict().items()})
        out.update({f"target/{k}": v for k, v in self.target_params.state_dict().items()})
        return out

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        for prefix, store in (("actor/", self.actor_params), ("critic/", self.critic_params),
                              ("target/", self.target_params)):
            store.load_state_dict({k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})

    def save(self, path: str | Path, meta: dict | None = None) -> Path:
        info = {"kind": "sac", "state_dim": self.state_dim, "config": self.config.to_dict()}
        info.update(meta or {})
        return nn.save_checkpoint(path, self.state_dict(), info)

    @classmethod
    def load(cls, path: str | Path) -> tuple["SACAgent", dict]:
        arrays, meta = nn.load_checkpoint(path)
        if meta.get("kind") != "sac":
            raise ConfigError(f"{path}: not a SAC checkpoint")
        agent = cls(int(meta["state_dim"]), SACConfig(**meta["config"]))
        agent.load_state_dict(arrays)
        return agent, meta
