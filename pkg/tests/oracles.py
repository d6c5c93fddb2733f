"""Independent reference computations used as test oracles.

Nothing here imports the package's autodiff; gradients are finite
differences over plain callables.
"""
from __future__ import annotations

import itertools
import math
from typing import Callable

import numpy as np


def central_diff(f: Callable[[], float], arr: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """d f / d arr by central differences, perturbing ``arr`` in place."""
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + step
        up = f()
        flat[k] = orig - step
        down = f()
        flat[k] = orig
        gflat[k] = (up - down) / (2.0 * step)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-10) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def sig(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def scalar_lstm_step(x, h, c, W_ih, W_hh, b):
    """Textbook LSTM cell evaluated element by element with python floats."""
    hidden = len(h)
    z = []
    for r in range(4 * hidden):
        acc = b[r]
        for j in range(len(x)):
            acc += W_ih[r][j] * x[j]
        for j in range(hidden):
            acc += W_hh[r][j] * h[j]
        z.append(acc)
    h_new, c_new = [], []
    for u in range(hidden):
        i = sig(z[u])
        f = sig(z[hidden + u])
        g = math.tanh(z[2 * hidden + u])
        o = sig(z[3 * hidden + u])
        cu = f * c[u] + i * g
        c_new.append(cu)
        h_new.append(o * math.tanh(cu))
    return h_new, c_new


def scalar_adam(params, grads_seq, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Adam over a flat list of python floats for a list of gradient lists."""
    p = list(params)
    m = [0.0] * len(p)
    v = [0.0] * len(p)
    for t, grads in enumerate(grads_seq, start=1):
        for k, g in enumerate(grads):
            m[k] = b1 * m[k] + (1 - b1) * g
            v[k] = b2 * v[k] + (1 - b2) * g * g
            mh = m[k] / (1 - b1 ** t)
            vh = v[k] / (1 - b2 ** t)
            p[k] -= lr * mh / (math.sqrt(vh) + eps)
    return p


def scalar_reward(r, d, d_next, c_pred, p, mu, lam, eta, kappa, beta, weighted=True, eps=1e-6):
    """Proactive reward written out term by term for two services."""
    total = 0.0
    for x in range(2):
        if d[x] < eps:
            q = 1.0 if r[x] >= d[x] else 0.0
            total += (p[x] if weighted else 1.0) * q + mu * q
            continue
        total += (p[x] if weighted else 1.0) * min(r[x], d[x]) / d[x]
        total += mu * min(p[x] * r[x], d_next[x]) / d[x]
    load = r[0] + r[1] + beta * (d_next[0] + d_next[1])
    return total - lam * (load ** kappa - 1.0) - eta * c_pred


def np_mlp(arrays, prefix: str, n_layers: int, x: np.ndarray) -> np.ndarray:
    """ReLU MLP forward from raw weight arrays named ``{prefix}.{k}.W/b``."""
    h = x
    for k in range(n_layers):
        h = h @ arrays[f"{prefix}.{k}.W"].T + arrays[f"{prefix}.{k}.b"]
        if k < n_layers - 1:
            h = np.maximum(h, 0.0)
    return h


def actor_loss_oracle(ag, s, noise):
    """Mean ``alpha * log pi - min Q`` recomputed with numpy from the agent's raw weights."""
    act = {k: v.data for k, v in ag.actor_params.items()}
    crit = {k: v.data for k, v in ag.critic_params.items()}
    out = np_mlp(act, "actor", 3, s)
    mean, ls = out[:, :2], np.clip(out[:, 2:], -20, 2)
    u = mean + np.exp(ls) * noise
    a = np.tanh(u)
    logp = (-0.5 * noise ** 2 - ls - 0.5 * math.log(2 * math.pi) - np.log(1 - a ** 2)).sum(axis=1)
    sa = np.concatenate([s, a], axis=1)
    q = np.minimum(np_mlp(crit, "q1", 3, sa), np_mlp(crit, "q2", 3, sa))[:, 0]
    return float(np.mean(ag.config.alpha * logp - q))


def critic_loss_oracle(ag, b, y):
    """Summed twin-critic MSE against fixed targets ``y``, in numpy."""
    crit = {k: v.data for k, v in ag.critic_params.items()}
    sa = np.concatenate([b.s, b.a], axis=1)
    return float(np.mean((np_mlp(crit, "q1", 3, sa)[:, 0] - y) ** 2) + np.mean((np_mlp(crit, "q2", 3, sa)[:, 0] - y) ** 2))


# ------------------------------------------------------------ toy DP oracle
GRID5 = (-1.0, -0.5, 0.0, 0.5, 1.0)


def toy_grant(mig_prev, action, R, v_max):
    """MIG grant for a small, uncontended allocation: floor((prev + a*v)*R), clipped at 0.

    Valid only while the requested total stays under capacity (no scaling)."""
    out = []
    for m, a in zip(mig_prev, action):
        r = min(max(m / R + a * v_max, 0.0), 1.0)
        out.append(int(math.floor(r * R + 1e-9)))
    if sum(out) > R:
        raise ValueError("toy left the uncontended regime")
    return tuple(out)


def toy_oracle(mig0, d, d_next, steps, R, v_max, reward_kw, grid=GRID5):
    """Best cumulative reward over all grid action sequences, by memoised DP
    (value) and by plain enumeration (cross-check)."""
    actions = [(a, b) for a in grid for b in grid]

    def step_reward(mig):
        return scalar_reward((mig[0] / R, mig[1] / R), d, d_next, 0.0, **reward_kw)

    memo = {}

    def value(mig, k):
        if k == steps:
            return 0.0
        key = (mig, k)
        if key not in memo:
            best = -math.inf
            for act in actions:
                nxt = toy_grant(mig, act, R, v_max)
                best = max(best, step_reward(nxt) + value(nxt, k + 1))
            memo[key] = best
        return memo[key]

    dp = value(tuple(mig0), 0)
    brute, best_seq = -math.inf, None
    for seq in itertools.product(actions, repeat=steps):
        mig, total = tuple(mig0), 0.0
        for act in seq:
            mig = toy_grant(mig, act, R, v_max)
            total += step_reward(mig)
        if total > brute:
            brute, best_seq = total, seq
    return dp, brute, best_seq
