"""Dense and LSTM layers with exact analytic backward passes.

All arrays are float64 and batched along the first axis.  Layers register
their blocks in a ParameterStore and accumulate gradients in place, so one
store drives a whole network and its optimizer.
"""

from __future__ import annotations

import numpy as np

from ..errors import ShapeMismatch
from .params import ParameterStore


def orthogonal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q[:rows, :cols] if rows >= cols else q[:cols, :rows].T


def fan_in_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(cols)
    return rng.uniform(-bound, bound, size=(rows, cols))


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax along the last axis; output sums to 1."""
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Gradient through softmax given dL/dprobs."""
    dot = np.sum(grad_probs * probs, axis=-1, keepdims=True)
    return probs * (grad_probs - dot)


class Dense:
    """Affine layer ``y = x W^T + b`` with optional ReLU."""

    def __init__(self, store: ParameterStore, name: str, in_dim: int, out_dim: int,
                 rng: np.random.Generator, relu: bool = False):
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.relu = relu
        self.W = store.add(f"{name}.W", fan_in_uniform(rng, out_dim, in_dim))
        self.b = store.add(f"{name}.b", np.zeros(out_dim))
        self.gW = store.grads[f"{name}.W"]
        self.gb = store.grads[f"{name}.b"]

    def forward(self, x: np.ndarray):
        x = np.atleast_2d(x)
        if x.shape[1] != self.in_dim:
            raise ShapeMismatch(
                f"{self.name}: expected input dim {self.in_dim}, got {x.shape[1]}"
            )
        pre = x @ self.W.T + self.b
        out = np.maximum(pre, 0.0) if self.relu else pre
        return out, (x, pre)

    def backward(self, grad_out: np.ndarray, cache):
        x, pre = cache
        grad_out = np.atleast_2d(grad_out)
        if self.relu:
            grad_out = grad_out * (pre > 0.0)
        self.gW += grad_out.T @ x
        self.gb += grad_out.sum(axis=0)
        return grad_out @ self.W


class LSTM:
    """Standard LSTM cell (gate order: input, forget, candidate, output)."""

    def __init__(self, store: ParameterStore, name: str, in_dim: int, hidden: int,
                 rng: np.random.Generator):
        self.name = name
        self.in_dim = in_dim
        self.hidden = hidden
        wh = np.concatenate([orthogonal(rng, hidden, hidden) for _ in range(4)])
        self.Wx = store.add(f"{name}.Wx", fan_in_uniform(rng, 4 * hidden, in_dim))
        self.Wh = store.add(f"{name}.Wh", wh)
        self.b = store.add(f"{name}.b", np.zeros(4 * hidden))
        self.gWx = store.grads[f"{name}.Wx"]
        self.gWh = store.grads[f"{name}.Wh"]
        self.gb = store.grads[f"{name}.b"]

    def initial_state(self, batch: int):
        return np.zeros((batch, self.hidden)), np.zeros((batch, self.hidden))

    def step(self, x: np.ndarray, h: np.ndarray, c: np.ndarray):
        x = np.atleast_2d(x)
        if x.shape[1] != self.in_dim:
            raise ShapeMismatch(
                f"{self.name}: expected input dim {self.in_dim}, got {x.shape[1]}"
            )
        if h.shape != c.shape or h.shape[1] != self.hidden:
            raise ShapeMismatch(f"{self.name}: bad recurrent state shape {h.shape}")
        z = x @ self.Wx.T + h @ self.Wh.T + self.b
        H = self.hidden
        i = sigmoid(z[:, :H])
        f = sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = sigmoid(z[:, 3 * H :])
        c_new = f * c + i * g
        h_new = o * np.tanh(c_new)
        cache = (x, h, c, i, f, g, o, c_new)
        return h_new, c_new, cache

    def backward_step(self, dh: np.ndarray, dc: np.ndarray, cache):
        """One BPTT step; returns (dx, dh_prev, dc_prev) and accumulates grads."""
        x, h, c, i, f, g, o, c_new = cache
        tc = np.tanh(c_new)
        do = dh * tc
        dc_total = dc + dh * o * (1.0 - tc**2)
        di = dc_total * g
        df = dc_total * c
        dg = dc_total * i
        dc_prev = dc_total * f
        dz = np.concatenate(
            [
                di * i * (1.0 - i),
                df * f * (1.0 - f),
                dg * (1.0 - g**2),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        self.gWx += dz.T @ x
        self.gWh += dz.T @ h
        self.gb += dz.sum(axis=0)
        dx = dz @ self.Wx
        dh_prev = dz @ self.Wh
        return dx, dh_prev, dc_prev
