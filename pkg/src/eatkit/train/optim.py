from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..tensor import NonFiniteError, Parameter


@dataclass
class Adam:
    """Adam with bias correction; moments are keyed by parameter name."""

    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: Sequence[Parameter]) -> None:
        for p in params:
            if not np.all(np.isfinite(p.grad)):
                raise NonFiniteError(f"non-finite gradient for parameter {p.name}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p in params:
            m = self.m.get(p.name)
            if m is None:
                m = self.m[p.name] = np.zeros_like(p.data)
                self.v[p.name] = np.zeros_like(p.data)
            v = self.v[p.name]
            if m.shape != p.shape:
                raise ValueError(f"optimizer state for {p.name} has shape {m.shape}, parameter {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad * p.grad
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def copy(self) -> "Adam":
        return Adam(self.lr, self.beta1, self.beta2, self.eps, self.step_count,
                    {k: v.copy() for k, v in self.m.items()}, {k: v.copy() for k, v in self.v.items()})

    def hyperparams(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "step": self.step_count}


def adam_step(params: Sequence[Parameter], state: Adam) -> Adam:
    """One update of ``params`` from their current ``grad``; returns ``state``."""
    state.step(params)
    return state
