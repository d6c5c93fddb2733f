"""The fixed operator set: dense, LSTM cell, layer norm, dropout, pointwise
nonlinearities, reductions and the two training losses.

Each operator computes its forward result with numpy and attaches a
hand-derived backward closure.
"""
from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ShapeError
from .tensor import Tensor, as_tensor

LN_EPS = 1e-8
BCE_EPS = 1e-7


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def dense(x, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``y = x W^T + b`` for a single vector ``x[in]`` or a batch ``x[B, in]``."""
    x = as_tensor(x)
    xd, Wd = x.data, W.data
    if Wd.ndim != 2 or xd.ndim not in (1, 2) or xd.shape[-1] != Wd.shape[1]:
        raise ShapeError(f"dense: x{xd.shape} does not conform with W{Wd.shape}")
    if b is not None and b.data.shape != (Wd.shape[0],):
        raise ShapeError(f"dense: bias {b.data.shape} != ({Wd.shape[0]},)")
    y = xd @ Wd.T
    if b is not None:
        y = y + b.data
    vector = xd.ndim == 1
    need_x, need_W = x.requires_grad, W.requires_grad
    need_b = b is not None and b.requires_grad

    def bwd(g):
        gx = g @ Wd if need_x else None
        gW = None
        if need_W:
            gW = np.outer(g, xd) if vector else g.T @ xd
        gb = None
        if need_b:
            gb = g if vector else g.sum(axis=0)
        return (gx, gW, gb) if b is not None else (gx, gW)

    parents = (x, W, b) if b is not None else (x, W)
    return Tensor._result(y, parents, bwd, "dense")


# ----------------------------------------------------------- pointwise
def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    y = _sigmoid(x.data)
    return Tensor._result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return Tensor._result(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0.0
    return Tensor._result(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def exp(x) -> Tensor:
    x = as_tensor(x)
    y = np.exp(x.data)
    return Tensor._result(y, (x,), lambda g: (g * y,), "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return Tensor._result(np.log(xd), (x,), lambda g: (g / xd,), "log")


def softplus(x) -> Tensor:
    """``log(1 + e^x)``, computed without overflow."""
    x = as_tensor(x)
    xd = x.data
    return Tensor._result(np.logaddexp(0.0, xd), (x,), lambda g: (g * _sigmoid(xd),), "softplus")


def square(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return Tensor._result(xd * xd, (x,), lambda g: (2.0 * g * xd,), "square")


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp to ``[lo, hi]``; gradient passes only where the input was inside."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return Tensor._result(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "clip")


def minimum(a, b) -> Tensor:
    """Elementwise minimum; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"minimum: {a.data.shape} vs {b.data.shape}")
    pick_a = a.data <= b.data

    def bwd(g):
        return g * pick_a, g * ~pick_a

    return Tensor._result(np.where(pick_a, a.data, b.data), (a, b), bwd, "minimum")


# --------------------------------------------------------- normalisation
def layer_norm(x, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalise the last axis to zero mean / unit variance, then apply gain and bias."""
    x = as_tensor(x)
    xd = x.data
    n = xd.shape[-1]
    if n == 0:
        raise ShapeError("layer_norm needs a non-empty feature axis")
    if gain.data.shape != (n,) or bias.data.shape != (n,):
        raise ShapeError(f"layer_norm: gain/bias must have shape ({n},)")
    centred = xd - xd.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv
    gd = gain.data
    need = (x.requires_grad, gain.requires_grad, bias.requires_grad)

    def bwd(g):
        gx = None
        if need[0]:
            dxhat = g * gd
            gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        flat_g = g.reshape(-1, n)
        ggain = (flat_g * xhat.reshape(-1, n)).sum(axis=0) if need[1] else None
        gbias = flat_g.sum(axis=0) if need[2] else None
        return gx, ggain, gbias

    return Tensor._result(xhat * gd + bias.data, (x, gain, bias), bwd, "layer_norm")


def dropout(x, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout. Identity (the same object) at inference or rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    x = as_tensor(x)
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode needs a random generator")
    mask = (rng.random(x.data.shape) >= rate) / (1.0 - rate)
    return Tensor._result(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# ------------------------------------------------------------- LSTM cell
def _act(name: str, z: np.ndarray) -> np.ndarray:
    return np.tanh(z) if name == "tanh" else np.maximum(z, 0.0)


def _act_grad(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    return 1.0 - a * a if name == "tanh" else (z > 0.0).astype(np.float64)


_scales: dict[int, np.ndarray] = {}


def _gate_scale(hidden: int) -> np.ndarray:
    sc = _scales.get(hidden)
    if sc is None:
        sc = np.full(4 * hidden, 0.5)
        sc[2 * hidden:3 * hidden] = 1.0
        _scales[hidden] = sc
    return sc


def lstm_cell(x, h, c, W_ih: Tensor, W_hh: Tensor, b: Tensor,
              activation: str = "tanh") -> tuple[Tensor, Tensor]:
    """One step of a gated LSTM cell.

    Gate rows of ``W_ih``/``W_hh``/``b`` are stacked input, forget, candidate,
    output. ``c = f*c_prev + i*g`` and ``h = o*act(c)``.
    """
    if activation not in ("tanh", "relu"):
        raise ConfigError(f"unknown cell activation {activation!r}")
    x, h, c = as_tensor(x), as_tensor(h), as_tensor(c)
    hidden = W_hh.data.shape[1]
    four = 4 * hidden
    if W_hh.data.shape != (four, hidden):
        raise ShapeError(f"W_hh must be ({four}, {hidden}), got {W_hh.data.shape}")
    if W_ih.data.ndim != 2 or W_ih.data.shape[0] != four or x.data.shape[-1] != W_ih.data.shape[1]:
        raise ShapeError(f"W_ih {W_ih.data.shape} does not match input {x.data.shape}")
    if b.data.shape != (four,):
        raise ShapeError(f"bias must be ({four},), got {b.data.shape}")
    if h.data.shape[-1] != hidden or c.data.shape != h.data.shape:
        raise ShapeError(f"state shapes h{h.data.shape} c{c.data.shape} != hidden {hidden}")

    xd, hd, cd = x.data, h.data, c.data
    if W_ih.data.shape[1] == 1:
        zx = xd * W_ih.data[:, 0]  # rank-1 input: a broadcast product is exact and cheaper
    else:
        zx = xd @ W_ih.data.T
    z = zx + hd @ W_hh.data.T + b.data
    zg = z[..., 2 * hidden:3 * hidden]
    if activation == "tanh":
        # one tanh over all gates: sigmoid(v) = (tanh(v/2) + 1) / 2
        t = np.tanh(z * _gate_scale(hidden))
        i = 0.5 * (t[..., :hidden] + 1.0)
        f = 0.5 * (t[..., hidden:2 * hidden] + 1.0)
        gg = t[..., 2 * hidden:3 * hidden]
        o = 0.5 * (t[..., 3 * hidden:] + 1.0)
    else:
        i = _sigmoid(z[..., :hidden])
        f = _sigmoid(z[..., hidden:2 * hidden])
        gg = _act(activation, zg)
        o = _sigmoid(z[..., 3 * hidden:])
    c_new = f * cd + i * gg
    a_c = _act(activation, c_new)
    h_new = o * a_c
    vector = xd.ndim == 1
    nx, nh, nc, nWi, nWh = (t.requires_grad for t in (x, h, c, W_ih, W_hh))

    def bwd(gp):
        dh = gp[..., :hidden]
        dc = gp[..., hidden:]
        dct = dc + dh * o * _act_grad(activation, c_new, a_c)
        dz = np.concatenate([
            dct * gg * i * (1.0 - i),
            dct * cd * f * (1.0 - f),
            dct * i * _act_grad(activation, zg, gg),
            dh * a_c * o * (1.0 - o),
        ], axis=-1)
        gx = dz @ W_ih.data if nx else None
        gh = dz @ W_hh.data if nh else None
        gc = dct * f if nc else None
        if vector:
            gWih = np.outer(dz, xd) if nWi else None
            gWhh = np.outer(dz, hd) if nWh else None
            gb = dz
        else:
            gWih = dz.T @ xd if nWi else None
            gWhh = dz.T @ hd if nWh else None
            gb = dz.sum(axis=0)
        return gx, gh, gc, gWih, gWhh, gb

    packed = Tensor._result(np.concatenate([h_new, c_new], axis=-1),
                            (x, h, c, W_ih, W_hh, b), bwd, "lstm_cell")
    return packed[..., :hidden], packed[..., hidden:]


# ------------------------------------------------------------------ losses
def mse(pred, target) -> Tensor:
    pred, target = as_tensor(pred), as_tensor(target)
    diff = pred - target
    return (diff * diff).mean()


def bce(prob, target, eps: float = BCE_EPS) -> Tensor:
    """Binary cross-entropy ``-mean[s log p + (1-s) log(1-p)]`` with ``p`` clipped."""
    prob, target = as_tensor(prob), as_tensor(target)
    p = clip(prob, eps, 1.0 - eps)
    return -(target * log(p) + (1.0 - target) * log(1.0 - p)).mean()
