"""SGD and Adam over a ParameterStore's gradient blocks."""

from __future__ import annotations

import numpy as np

from ..errors import NonFiniteGradient
from .params import ParameterStore


def _check_finite(store: ParameterStore) -> None:
    for name, g in store.grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in block {name!r}")


class SGD:
    def __init__(self, store: ParameterStore, lr: float):
        self.store = store
        self.lr = lr

    def step(self) -> None:
        _check_finite(self.store)
        for name, p in self.store.blocks.items():
            p -= self.lr * self.store.grads[name]


class Adam:
    def __init__(self, store: ParameterStore, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in store.blocks.items()}
        self.v = {k: np.zeros_like(v) for k, v in store.blocks.items()}

    def step(self) -> None:
        _check_finite(self.store)
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, p in self.store.blocks.items():
            g = self.store.grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def state_blocks(self) -> dict[str, np.ndarray]:
        """Moment estimates as named blocks (for checkpointing)."""
        out = {f"adam.m.{k}": v for k, v in self.m.items()}
        out.update({f"adam.v.{k}": v for k, v in self.v.items()})
        out["adam.t"] = np.array([float(self.t)])
        return out
