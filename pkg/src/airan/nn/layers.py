"""Parameter initialisers and the small MLP used by the actor and critics."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import ops
from .params import ParamStore
from .tensor import Tensor


def init_dense(store: ParamStore, prefix: str, n_in: int, n_out: int,
               rng: np.random.Generator, scale: float = 1.0) -> None:
    """Uniform fan-in initialisation, ``U(-1/sqrt(n_in), 1/sqrt(n_in)) * scale``."""
    bound = scale / np.sqrt(n_in)
    store.add(f"{prefix}.W", rng.uniform(-bound, bound, size=(n_out, n_in)))
    store.add(f"{prefix}.b", rng.uniform(-bound, bound, size=n_out))


def init_lstm(store: ParamStore, prefix: str, n_in: int, hidden: int,
              rng: np.random.Generator, unit_forget_bias: bool = True) -> None:
    bound = 1.0 / np.sqrt(hidden)
    store.add(f"{prefix}.W_ih", rng.uniform(-bound, bound, size=(4 * hidden, n_in)))
    store.add(f"{prefix}.W_hh", rng.uniform(-bound, bound, size=(4 * hidden, hidden)))
    b = np.zeros(4 * hidden)
    if unit_forget_bias:
        b[hidden:2 * hidden] = 1.0
    store.add(f"{prefix}.b", b)


def init_layer_norm(store: ParamStore, prefix: str, n: int) -> None:
    store.add(f"{prefix}.gain", np.ones(n))
    store.add(f"{prefix}.bias", np.zeros(n))


class MLP:
    """``Linear -> ReLU -> ... -> Linear`` over parameters in a shared store."""

    def __init__(self, store: ParamStore, prefix: str, sizes: Sequence[int],
                 rng: np.random.Generator, last_scale: float = 1.0):
        if len(sizes) < 2:
            raise ValueError("an MLP needs at least input and output sizes")
        self.store = store
        self.prefix = prefix
        self.sizes = tuple(int(s) for s in sizes)
        n_layers = len(self.sizes) - 1
        for k in range(n_layers):
            scale = last_scale if k == n_layers - 1 else 1.0
            init_dense(store, f"{prefix}.{k}", self.sizes[k], self.sizes[k + 1], rng, scale)
        self._names = [(f"{prefix}.{k}.W", f"{prefix}.{k}.b") for k in range(n_layers)]

    def __call__(self, x) -> Tensor:
        h = x
        last = len(self._names) - 1
        for k, (wn, bn) in enumerate(self._names):
            h = ops.dense(h, self.store[wn], self.store[bn])
            if k < last:
                h = ops.relu(h)
        return h

    def forward_np(self, x: np.ndarray) -> np.ndarray:
        """Tape-free forward pass, bit-identical to ``__call__``."""
        h = np.asarray(x, dtype=np.float64)
        last = len(self._names) - 1
        for k, (wn, bn) in enumerate(self._names):
            h = h @ self.store[wn].data.T + self.store[bn].data
            if k < last:
                h = h * (h > 0.0)
        return h
