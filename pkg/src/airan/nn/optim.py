"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParamStore


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


class Adam:
    def __init__(self, params: ParamStore, lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = float(lr)
        self.beta1, self.beta2 = (float(b) for b in betas)
        self.eps = float(eps)
        self.state = AdamState(
            m={n: np.zeros_like(p.data) for n, p in params.items()},
            v={n: np.zeros_like(p.data) for n, p in params.items()},
        )

    def step(self) -> None:
        """Apply one update from the accumulated gradients, then zero them."""
        st = self.state
        st.step += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** st.step
        c2 = 1.0 - b2 ** st.step
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m, v = st.m[name], st.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            denom = np.sqrt(v / c2)
            denom += self.eps
            p.data = p.data - (self.lr / c1) * m / denom
        self.params.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"m.{n}": a.copy() for n, a in self.state.m.items()}
        out.update({f"v.{n}": a.copy() for n, a in self.state.v.items()})
        out["step"] = np.array(float(self.state.step))
        return out

    def load_state_dict(self, arrays: dict[str, np.ndarray]) -> None:
        for n in self.state.m:
            self.state.m[n] = np.array(arrays[f"m.{n}"], dtype=np.float64)
            self.state.v[n] = np.array(arrays[f"v.{n}"], dtype=np.float64)
        self.state.step = int(arrays["step"])
