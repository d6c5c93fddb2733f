"""The shared-compute environment: RAN and AI demand served from one MIG pool.

All quantities are fractions of capacity; MIG integers appear only when an
allocation is actuated. One call to :meth:`AiRanEnv.step` is one control
interval: observe demand, forecast, allocate under the rate limit and the
capacity constraint, account completions, score the step.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .traces import ai_demand

SERVICES = ("ran", "ai")
TELEMETRY_COLUMNS = ("t", "d_ran", "d_ai", "dhat_ran1", "dhat_ai1", "r_ran", "r_ai", "mig_ran",
                     "mig_ai", "c_ran", "c_ai", "reward", "c_pred", "spike_prob", "W")


@dataclass
class EnvConfig:
    R_max: int = 21
    v_max: float = 0.1
    p_ran: float = 1.0
    p_ai: float = 0.5
    mu: float = 0.1
    lambda_pen: float = 0.05
    eta: float = 0.5
    kappa: float = 2.5
    beta_fut: float = 0.9
    H: int = 3
    alpha_borrow: tuple[float, ...] | None = None  # None -> 0.5 ** delta
    borrow_cap: float = 0.2
    lifetime_ran: float = 2.0
    lifetime_ai: float = 10.0
    steps_per_episode: int = 100
    ai_horizon: int = 100
    reward_form: str = "weighted"  # "weighted" (priority-weighted QoS) or "unweighted"
    contention_basis: str = "demand"  # "demand" or "allocation"
    demand_eps: float = 1e-6
    initial_alloc: tuple[float, float] = (0.5, 0.5)

    def __post_init__(self):
        if self.R_max < 1:
            raise ConfigError("env.R_max must be >= 1")
        if not 0.0 < self.v_max <= 1.0:
            raise ConfigError("env.v_max must lie in (0, 1]")
        if not (0.0 <= self.p_ai <= self.p_ran <= 1.0):
            raise ConfigError("env priorities must satisfy 0 <= p_ai <= p_ran <= 1")
        if self.kappa <= 1.0:
            raise ConfigError("env.kappa must be > 1")
        if not 0.0 < self.beta_fut < 1.0:
            raise ConfigError("env.beta_fut must lie in (0, 1)")
        if self.H < 1 or self.steps_per_episode < 1 or self.ai_horizon < 1:
            raise ConfigError("env.H, steps_per_episode and ai_horizon must be >= 1")
        if self.alpha_borrow is None:
            self.alpha_borrow = tuple(0.5 ** d for d in range(1, self.H + 1))
        self.alpha_borrow = tuple(float(a) for a in self.alpha_borrow)
        if len(self.alpha_borrow) != self.H or any(not 0.0 <= a <= 1.0 for a in self.alpha_borrow):
            raise ConfigError("env.alpha_borrow needs H values in [0, 1]")
        if self.borrow_cap < 0:
            raise ConfigError("env.borrow_cap must be >= 0")
        if self.lifetime_ran <= 0 or self.lifetime_ai <= 0:
            raise ConfigError("env task lifetimes must be > 0")
        if self.reward_form not in ("weighted", "unweighted"):
            raise ConfigError("env.reward_form must be 'weighted' or 'unweighted'")
        if self.contention_basis not in ("demand", "allocation"):
            raise ConfigError("env.contention_basis must be 'demand' or 'allocation'")
        self.initial_alloc = tuple(float(v) for v in self.initial_alloc)
        if len(self.initial_alloc) != 2 or any(not 0.0 <= v <= 1.0 for v in self.initial_alloc):
            raise ConfigError("env.initial_alloc must be two fractions in [0, 1]")

    @property
    def mig_quantum(self) -> float:
        return 1.0 / self.R_max

    @property
    def priorities(self) -> tuple[float, float]:
        return (self.p_ran, self.p_ai)

    @property
    def state_dim(self) -> int:
        return 2 + 2 * self.H + 2

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------------- state
@dataclass(frozen=True)
class OrchestratorState:
    d_ran: float
    d_ai: float
    d_hat_ran: tuple[float, ...]
    d_hat_ai: tuple[float, ...]
    r_prev_ran: float
    r_prev_ai: float

    def to_vector(self) -> np.ndarray:
        return np.array([self.d_ran, self.d_ai, *self.d_hat_ran, *self.d_hat_ai,
                         self.r_prev_ran, self.r_prev_ai], dtype=np.float64)

    @classmethod
    def from_vector(cls, vec, H: int) -> "OrchestratorState":
        v = np.asarray(vec, dtype=np.float64)
        if v.shape != (2 + 2 * H + 2,):
            raise ConfigError(f"state vector of shape {v.shape} does not match H={H}")
        return cls(float(v[0]), float(v[1]), tuple(map(float, v[2:2 + H])),
                   tuple(map(float, v[2 + H:2 + 2 * H])), float(v[-2]), float(v[-1]))


def build_state(d_ran: float, d_ai: float, d_hat_ran: Sequence[float], d_hat_ai: Sequence[float],
                r_prev: Sequence[float]) -> OrchestratorState:
    """Layout: ``(d_ran, d_ai, d_hat_ran[1..H], d_hat_ai[1..H], r_prev_ran, r_prev_ai)``."""
    if len(d_hat_ran) != len(d_hat_ai) or len(d_hat_ran) < 1:
        raise ConfigError("forecast blocks must both hold H >= 1 values")
    values = [d_ran, d_ai, *d_hat_ran, *d_hat_ai, *r_prev]
    if len(r_prev) != 2:
        raise ConfigError("r_prev must hold two allocations")
    for v in values:
        if not (0.0 <= v <= 1.0):
            raise ConfigError(f"state entry {v!r} outside [0, 1]")
    return OrchestratorState(float(d_ran), float(d_ai), tuple(map(float, d_hat_ran)),
                             tuple(map(float, d_hat_ai)), float(r_prev[0]), float(r_prev[1]))


# ------------------------------------------------- freed resources, contention
def completion_probability(delta: float, mean_lifetime: float) -> float:
    """``P_c = 1 - exp(-delta / lifetime)``: chance a running task has finished within delta steps."""
    if math.isinf(mean_lifetime):
        return 0.0
    return 1.0 - math.exp(-delta / mean_lifetime)


def predicted_free(alloc_prev: Sequence[float], config: EnvConfig, delta: int) -> float:
    """Expected capacity released by ``t + delta``: ``sum_x P_c(x, delta) * r_x(t-1)``."""
    if not 1 <= delta <= config.H:
        raise ConfigError(f"delta must lie in 1..{config.H}")
    return (completion_probability(delta, config.lifetime_ran) * alloc_prev[0]
            + completion_probability(delta, config.lifetime_ai) * alloc_prev[1])


def borrowing_capacity(alloc_prev: Sequence[float], config: EnvConfig) -> float:
    """``R_total = 1 + min(borrow_cap, sum_delta alpha_delta * free(t + delta))``."""
    borrowed = sum(a * predicted_free(alloc_prev, config, d)
                   for d, a in enumerate(config.alpha_borrow, start=1))
    return 1.0 + min(config.borrow_cap, borrowed)


def contention_factor(d_total_now: float, d_total_forecasts: Sequence[float], beta: float) -> float:
    """``C_pred = total(t) + sum_delta beta^delta * total(t + delta)`` in capacity fractions."""
    out = d_total_now
    w = 1.0
    for v in d_total_forecasts:
        w *= beta
        out += w * v
    return out


# -------------------------------------------------------------- allocation
def priority_scale(r_temp: Sequence[float], priorities: Sequence[float], R_total: float) -> tuple[float, float]:
    """Scale an over-subscribed request down to ``R_total`` in proportion to ``p_x * r_temp_x``.

    A share above its own request is capped and the remainder is handed to
    the other service, up to that service's request.
    """
    a, b = float(r_temp[0]), float(r_temp[1])
    if a + b <= R_total:
        return a, b
    wa, wb = priorities[0] * a, priorities[1] * b
    if wa + wb <= 0.0:  # both weights zero: split the budget by request size
        wa, wb = a, b
    ra = R_total * wa / (wa + wb)
    rb = R_total * wb / (wa + wb)
    if ra > a:
        rb = min(b, rb + (ra - a))
        ra = a
    elif rb > b:
        ra = min(a, ra + (rb - b))
        rb = b
    return ra, rb


@dataclass(frozen=True)
class Allocation:
    r: tuple[float, float]  # granted fractions, mig / R_max
    mig: tuple[int, int]
    r_temp: tuple[float, float]
    r_target: tuple[float, float]  # after priority scaling and the rate band, before quantization
    R_total: float


def _sanitize(v: float) -> float:
    return 0.0 if not math.isfinite(v) else float(v)


def apply_action(r_prev: Sequence[float], delta_r: Sequence[float], config: EnvConfig) -> Allocation:
    """Turn a requested change into an integer MIG grant.

    1. clip each change to +-v_max and the result to [0, 1];
    2. widen the budget with predicted freed capacity (capped);
    3. priority-scale an over-subscribed request;
    4. keep every service inside its rate band ``r_prev - v_max`` below;
    5. floor to MIG quanta and trim lower-priority quanta if the integer
       total exceeds R_max (never below the rate band floor).
    """
    v = config.v_max
    R = config.R_max
    prev = (min(max(_sanitize(r_prev[0]), 0.0), 1.0), min(max(_sanitize(r_prev[1]), 0.0), 1.0))
    d = [min(max(_sanitize(x), -v), v) for x in delta_r]
    r_temp = (min(max(prev[0] + d[0], 0.0), 1.0), min(max(prev[1] + d[1], 0.0), 1.0))
    R_total = borrowing_capacity(prev, config)
    r = list(priority_scale(r_temp, config.priorities, R_total))

    lo = (max(0.0, prev[0] - v), max(0.0, prev[1] - v))
    for x in (0, 1):
        if r[x] < lo[x]:
            need = lo[x] - r[x]
            y = 1 - x
            give = min(need, max(0.0, r[y] - lo[y]))
            r[y] -= give
            r[x] = lo[x]  # total may exceed by need - give only if the band sum itself exceeds R_total
    r = [min(max(val, 0.0), 1.0) for val in r]

    mig = [int(math.floor(val * R + 1e-9)) for val in r]
    excess = sum(mig) - R
    if excess > 0:
        order = sorted((0, 1), key=lambda i: config.priorities[i])  # lowest priority trimmed first
        for x in order:
            floor_x = max(0, int(math.floor(lo[x] * R + 1e-9)))
            cut = min(excess, max(0, mig[x] - floor_x))
            mig[x] -= cut
            excess -= cut
            if excess == 0:
                break
        if excess > 0:  # unreachable while sum(r_prev) <= 1; keep the physical invariant regardless
            for x in order:
                cut = min(excess, mig[x])
                mig[x] -= cut
                excess -= cut
    grant = (mig[0] / R, mig[1] / R)
    return Allocation(grant, (mig[0], mig[1]), r_temp, (r[0], r[1]), R_total)


def quantize(r: float, R_max: int) -> float:
    return math.floor(r * R_max + 1e-9) / R_max


def completed(r: float, d: float) -> float:
    return min(r, d)


# ------------------------------------------------------------------ reward
@dataclass(frozen=True)
class RewardTerms:
    qos_now: float
    qos_next: float
    penalty: float
    contention: float
    total: float


def overload_penalty(r_alloc: float, r_hat_alloc: float, config: EnvConfig) -> float:
    """``lambda * ((R_alloc + beta * R_hat_alloc)^kappa - 1)``; zero exactly at capacity."""
    load = r_alloc + config.beta_fut * r_hat_alloc
    return config.lambda_pen * (load ** config.kappa - 1.0)


def reward_terms(r: Sequence[float], d: Sequence[float], d_hat_next: Sequence[float],
                 c_pred: float, config: EnvConfig) -> RewardTerms:
    pri = config.priorities
    now = nxt = 0.0
    for x in (0, 1):
        c = completed(r[x], d[x])
        if d[x] < config.demand_eps:
            met = 1.0 if r[x] >= d[x] else 0.0
            ratio_now, ratio_next = met, met
        else:
            ratio_now = c / d[x]
            ratio_next = min(pri[x] * r[x], d_hat_next[x]) / d[x]
        weight = pri[x] if config.reward_form == "weighted" else 1.0
        now += weight * ratio_now
        nxt += config.mu * ratio_next
    penalty = overload_penalty(r[0] + r[1], d_hat_next[0] + d_hat_next[1], config)
    contention = config.eta * c_pred
    return RewardTerms(now, nxt, penalty, contention, now + nxt - penalty - contention)


def reward(r, d, d_hat_next, c_pred, config: EnvConfig) -> float:
    return reward_terms(r, d, d_hat_next, c_pred, config).total


def workload_increment(d_total: float, d_hat_total: float, spike_prob: float,
                       freed_alloc: float, c_pred: float) -> float:
    """One step of the demand-fusion accumulator (diagnostic only).

    ``0.5 * (d_total + d_hat_total * (1 - spike_prob)) - freed_alloc * c_pred``
    where ``freed_alloc`` is the completion-weighted allocation.
    """
    return 0.5 * (d_total + d_hat_total * (1.0 - spike_prob)) - freed_alloc * c_pred


def workload_telemetry(rows: Sequence[dict], config: EnvConfig) -> np.ndarray:
    """Recompute the W(t) column from telemetry rows."""
    out = np.empty(len(rows))
    acc = 0.0
    for k, row in enumerate(rows):
        freed = (completion_probability(1, config.lifetime_ran) * row["r_ran"]
                 + completion_probability(1, config.lifetime_ai) * row["r_ai"])
        acc += workload_increment(row["d_ran"] + row["d_ai"], row["dhat_ran1"] + row["dhat_ai1"],
                                  row["spike_prob"], freed, row["c_pred"])
        out[k] = acc
    return out


# ------------------------------------------------------------- environment
def causal_histories(values: np.ndarray, seq_len: int) -> np.ndarray:
    """Row ``t`` holds ``values[t-seq_len+1 .. t]``, left-padded with ``values[0]``."""
    v = np.asarray(values, dtype=np.float64)
    padded = np.concatenate([np.full(seq_len - 1, v[0]), v])
    idx = np.arange(v.size)[:, None] + np.arange(seq_len)[None, :]
    return padded[idx]


@dataclass
class StepResult:
    state: np.ndarray
    reward: float
    done: bool
    truncated: bool
    record: dict = field(default_factory=dict)


class AiRanEnv:
    """Episode-level simulator over a fixed demand sequence.

    ``reset`` receives the episode's demand values (from the KPI channel).
    RAN forecasts are computed causally for every step in one batch; the AI
    forecast is the analytic sinusoid at the global step index.
    """

    def __init__(self, config: EnvConfig | None = None, forecaster=None):
        self.config = config or EnvConfig()
        self.forecaster = forecaster
        self._t = 0
        self._n = 0

    # -------------------------------------------------------------- reset
    def reset(self, d_ran, d_ai, t0: int = 0, initial_alloc: Sequence[float] | None = None,
              ran_history: Sequence[float] | None = None) -> np.ndarray:
        """Start an episode. ``ran_history`` holds RAN demand observed before
        step 0 and seeds the forecaster's first windows."""
        cfg = self.config
        d_ran = np.asarray(d_ran, dtype=np.float64)
        d_ai = np.asarray(d_ai, dtype=np.float64)
        if d_ran.shape != d_ai.shape or d_ran.ndim != 1 or d_ran.size < 1:
            raise ConfigError("episode demands must be equal-length non-empty 1-D arrays")
        if np.any((d_ran < 0) | (d_ran > 1) | (d_ai < 0) | (d_ai > 1)) or not np.all(np.isfinite(d_ran + d_ai)):
            raise ConfigError("episode demands must lie in [0, 1]")
        self.d_ran, self.d_ai = d_ran, d_ai
        self.t0 = int(t0)
        self._n = d_ran.size
        H = cfg.H
        if self.forecaster is None:
            self.fc_ran = np.repeat(d_ran[:, None], H, axis=1)
            self.spike = np.zeros(self._n)
        else:
            seq_len = self.forecaster.config.seq_len
            prefix = np.asarray(ran_history if ran_history is not None else [], dtype=np.float64)
            hist = causal_histories(np.concatenate([prefix, d_ran]), seq_len)[prefix.size:]
            self.fc_ran, self.spike = self.forecaster.rollout(hist, H)
        steps = np.arange(self._n)[:, None] + np.arange(1, H + 1)[None, :] + self.t0
        self.fc_ai = np.clip((np.sin(4.0 * np.pi * steps / cfg.ai_horizon) + 1.0) / 2.0, 0.0, 1.0)
        init = cfg.initial_alloc if initial_alloc is None else initial_alloc
        self.r_prev = (quantize(init[0], cfg.R_max), quantize(init[1], cfg.R_max))
        self._t = 0
        self._W = 0.0
        return self._state(0)

    @property
    def length(self) -> int:
        return self._n

    @property
    def t(self) -> int:
        return self._t

    def _state(self, k: int) -> np.ndarray:
        H = self.config.H
        out = np.empty(2 + 2 * H + 2)
        out[0] = self.d_ran[k]
        out[1] = self.d_ai[k]
        out[2:2 + H] = self.fc_ran[k]
        out[2 + H:2 + 2 * H] = self.fc_ai[k]
        out[-2], out[-1] = self.r_prev
        return out

    def current_state(self) -> OrchestratorState:
        return OrchestratorState.from_vector(self._state(self._t), self.config.H)

    # --------------------------------------------------------------- step
    def step(self, action: Sequence[float]) -> StepResult:
        """Apply a normalised action in ``[-1, 1]^2`` (scaled to +-v_max)."""
        if self._t >= self._n:
            raise RuntimeError("episode finished; call reset()")
        cfg = self.config
        k = self._t
        a = [min(max(_sanitize(x), -1.0), 1.0) for x in action]
        alloc = apply_action(self.r_prev, (a[0] * cfg.v_max, a[1] * cfg.v_max), cfg)
        d = (float(self.d_ran[k]), float(self.d_ai[k]))
        nxt = (float(self.fc_ran[k, 0]), float(self.fc_ai[k, 0]))
        if cfg.contention_basis == "demand":
            now_total = d[0] + d[1]
        else:
            now_total = alloc.r[0] + alloc.r[1]
        c_pred = contention_factor(now_total, self.fc_ran[k] + self.fc_ai[k], cfg.beta_fut)
        rew = reward(alloc.r, d, nxt, c_pred, cfg)
        freed = (completion_probability(1, cfg.lifetime_ran) * alloc.r[0]
                 + completion_probability(1, cfg.lifetime_ai) * alloc.r[1])
        self._W += workload_increment(d[0] + d[1], nxt[0] + nxt[1], float(self.spike[k]), freed, c_pred)
        record = {
            "t": self.t0 + k, "d_ran": d[0], "d_ai": d[1], "dhat_ran1": nxt[0], "dhat_ai1": nxt[1],
            "r_ran": alloc.r[0], "r_ai": alloc.r[1], "mig_ran": alloc.mig[0], "mig_ai": alloc.mig[1],
            "c_ran": completed(alloc.r[0], d[0]), "c_ai": completed(alloc.r[1], d[1]),
            "reward": rew, "c_pred": c_pred, "spike_prob": float(self.spike[k]), "W": self._W,
        }
        self.r_prev = alloc.r
        self._t += 1
        done = self._t >= self._n
        state = self._state(self._t if not done else self._n - 1)
        if done:
            state[-2], state[-1] = self.r_prev
        return StepResult(state, rew, done, done, record)


def episode_profile_slice(d_ran: np.ndarray, t0: int, n: int, ai_horizon: int) -> tuple[np.ndarray, np.ndarray]:
    """RAN demand slice plus the matching analytic AI demand at global indices."""
    ran = np.asarray(d_ran[t0:t0 + n], dtype=np.float64)
    return ran, ai_demand(ran.size, ai_horizon, t0)
