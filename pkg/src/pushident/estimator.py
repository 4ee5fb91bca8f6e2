"""Recurrent predictor of the chain's normalized mass distribution.

Each push step feeds the previous pose, the executed action and the resulting
pose through a dense encoder, an LSTM and a softmax head, producing one
simplex estimate per step.  Training minimizes the step-averaged Euclidean
distance to the true distribution with minibatch SGD and a halving learning
rate schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteGradient, ShapeMismatch
from .interaction import EpisodeTrajectory, encode_push_response, push_response_dim
from .nn import LSTM, Dense, ParameterStore, SGD, softmax, softmax_backward

ENC_WIDTH = 32
LSTM_WIDTH = 64
HEAD_WIDTH = 32


@dataclass
class TrainingSchedule:
    """Desk-scale supervised training hyperparameters."""

    total_steps: int = 50_000
    batch_size: int = 16
    lr0: float = 0.1
    halving_period: int = 16_600
    eval_interval: int = 1_000

    def lr_at(self, step: int) -> float:
        return self.lr0 * 0.5 ** (step // self.halving_period)


@dataclass
class PredictionDataset:
    """Episodes with a split tag and the id of the policy that generated them."""

    episodes: list
    split: str = "train"
    provenance: str = "uniform"
    failures: int = 0  # discarded-and-resampled rollouts during collection

    def __len__(self):
        return len(self.episodes)

    def seeds(self) -> set:
        return {ep.seed for ep in self.episodes}


def check_split_disjoint(*datasets: PredictionDataset) -> None:
    """Raise if any two datasets share an episode seed."""
    seen: dict = {}
    for ds in datasets:
        for seed in ds.seeds():
            if seed in seen and seen[seed] != ds.split:
                raise ValueError(f"episode seed {seed} appears in {seen[seed]} and {ds.split}")
            seen[seed] = ds.split


class MassPredictor:
    """Predictor network; one simplex output per push step."""

    def __init__(self, n_links: int, rng: np.random.Generator,
                 enc_width: int = ENC_WIDTH, lstm_width: int = LSTM_WIDTH,
                 head_width: int = HEAD_WIDTH):
        self.n_links = n_links
        self.input_dim = push_response_dim(n_links)
        self.store = ParameterStore()
        self.encoder = Dense(self.store, "enc", self.input_dim, enc_width, rng, relu=True)
        self.core = LSTM(self.store, "core", enc_width, lstm_width, rng)
        self.head1 = Dense(self.store, "head1", lstm_width, head_width, rng, relu=True)
        self.head2 = Dense(self.store, "head2", head_width, n_links, rng)

    def episode_inputs(self, episode: EpisodeTrajectory) -> np.ndarray:
        """(E, D) per-step features of (q_t, a_t, q_{t+1}) in the object frame."""
        if episode.n != self.n_links:
            raise ShapeMismatch(
                f"predictor built for {self.n_links} links, episode has {episode.n}"
            )
        return np.stack(
            [
                encode_push_response(
                    episode.q_seq[t], episode.a_seq[t], episode.q_seq[t + 1],
                    self.n_links,
                )
                for t in range(episode.pushes)
            ]
        )

    def forward_batch(self, inputs: np.ndarray):
        """inputs (B, T, D) -> probabilities (B, T, n) plus backprop caches."""
        B, T, D = inputs.shape
        h, c = self.core.initial_state(B)
        probs = np.empty((B, T, self.n_links))
        caches = []
        for t in range(T):
            e, c_enc = self.encoder.forward(inputs[:, t, :])
            h, c, c_core = self.core.step(e, h, c)
            u, c_h1 = self.head1.forward(h)
            logits, c_h2 = self.head2.forward(u)
            p = softmax(logits)
            probs[:, t, :] = p
            caches.append((c_enc, c_core, c_h1, c_h2, p))
        return probs, caches

    def backward_batch(self, caches, grad_probs: np.ndarray) -> None:
        """Accumulate parameter gradients for dL/dprobs over a batch, via BPTT."""
        B = grad_probs.shape[0]
        dh = np.zeros((B, self.core.hidden))
        dc = np.zeros((B, self.core.hidden))
        for t in reversed(range(grad_probs.shape[1])):
            c_enc, c_core, c_h1, c_h2, p = caches[t]
            dlogits = softmax_backward(p, grad_probs[:, t, :])
            du = self.head2.backward(dlogits, c_h2)
            dh_head = self.head1.backward(du, c_h1)
            de, dh, dc = self.core.backward_step(dh + dh_head, dc, c_core)
            self.encoder.backward(de, c_enc)

    def predict_sequence(self, episode: EpisodeTrajectory) -> np.ndarray:
        """(E, n) simplex estimates, one per push step."""
        inputs = self.episode_inputs(episode)[None, :, :]
        probs, _ = self.forward_batch(inputs)
        return probs[0]

    def initial_state(self, batch: int = 1):
        return self.core.initial_state(batch)

    def forward_step(self, x: np.ndarray, h: np.ndarray, c: np.ndarray):
        """Advance one push step without caching; for reward computation."""
        e, _ = self.encoder.forward(np.atleast_2d(x))
        h, c, _ = self.core.step(e, h, c)
        u, _ = self.head1.forward(h)
        logits, _ = self.head2.forward(u)
        return softmax(logits), h, c


def loss(predictions, m_true) -> float:
    """Mean over steps of the Euclidean distance to the true distribution."""
    preds = np.atleast_2d(np.asarray(predictions, dtype=float))
    if preds.size == 0:
        raise ValueError("need at least one prediction")
    return float(np.mean(np.linalg.norm(preds - np.asarray(m_true), axis=-1)))


def _array_loss_and_grad(net: MassPredictor, inputs: np.ndarray,
                         targets: np.ndarray) -> float:
    """Batch loss from precomputed feature arrays; accumulates gradients."""
    probs, caches = net.forward_batch(inputs)
    diff = probs - targets[:, None, :]
    norms = np.linalg.norm(diff, axis=2)
    B, T = norms.shape
    total = float(np.mean(norms))
    safe = np.maximum(norms, 1e-12)[:, :, None]
    grad = diff / safe / (B * T)
    grad[norms < 1e-12] = 0.0  # subgradient at an exact hit
    net.backward_batch(caches, grad)
    return total


def _batch_loss_and_grad(net: MassPredictor, episodes) -> float:
    """Average per-episode loss over a batch; accumulates gradients."""
    inputs = np.stack([net.episode_inputs(ep) for ep in episodes])
    targets = np.stack([ep.m_true for ep in episodes])
    return _array_loss_and_grad(net, inputs, targets)


def batch_loss(net: MassPredictor, episodes) -> float:
    """Loss of a batch without touching gradients."""
    inputs = np.stack([net.episode_inputs(ep) for ep in episodes])
    targets = np.stack([ep.m_true for ep in episodes])
    probs, _ = net.forward_batch(inputs)
    return float(np.mean(np.linalg.norm(probs - targets[:, None, :], axis=2)))


def final_step_l1(net: MassPredictor, episodes) -> float:
    """Mean L1 error of the last-step estimate (the headline metric)."""
    errs = [
        float(np.abs(net.predict_sequence(ep)[-1] - ep.m_true).sum()) for ep in episodes
    ]
    return float(np.mean(errs))


def per_step_l1_curve(net: MassPredictor, episodes) -> np.ndarray:
    """Mean L1 error at each push step across episodes."""
    errs = np.stack(
        [np.abs(net.predict_sequence(ep) - ep.m_true).sum(axis=1) for ep in episodes]
    )
    return errs.mean(axis=0)


def train_predictor(
    net: MassPredictor,
    train_episodes,
    val_episodes,
    schedule: TrainingSchedule,
    rng: np.random.Generator,
) -> list[dict]:
    """Minibatch SGD on the step-averaged distance loss.

    History rows record (step, train_loss, val_l1, lr) at every evaluation;
    the best-validation parameters are restored at the end.  A non-finite
    gradient aborts training and restores the last good checkpoint.
    """
    if not train_episodes:
        raise ValueError("training set is empty")
    inputs_all = np.stack([net.episode_inputs(ep) for ep in train_episodes])
    targets_all = np.stack([ep.m_true for ep in train_episodes])
    val_inputs = (
        np.stack([net.episode_inputs(ep) for ep in val_episodes])
        if val_episodes else None
    )
    val_targets = (
        np.stack([ep.m_true for ep in val_episodes]) if val_episodes else None
    )
    opt = SGD(net.store, schedule.lr0)
    history: list[dict] = []
    best_val = np.inf
    best_blocks = net.store.copy_blocks()
    order = rng.permutation(len(train_episodes))
    cursor = 0
    for step_idx in range(1, schedule.total_steps + 1):
        if cursor + schedule.batch_size > len(order):
            order = rng.permutation(len(train_episodes))
            cursor = 0
        batch_ids = order[cursor : cursor + schedule.batch_size]
        cursor += schedule.batch_size
        net.store.zero_grads()
        train_loss = _array_loss_and_grad(
            net, inputs_all[batch_ids], targets_all[batch_ids]
        )
        opt.lr = schedule.lr_at(step_idx - 1)
        try:
            opt.step()
        except NonFiniteGradient:
            net.store.load_blocks(best_blocks)
            history.append(
                {"step": step_idx, "train_loss": train_loss, "val_l1": best_val,
                 "lr": opt.lr, "aborted": 1.0}
            )
            return history
        if step_idx % schedule.eval_interval == 0 or step_idx == schedule.total_steps:
            if val_inputs is not None:
                probs, _ = net.forward_batch(val_inputs)
                val = float(np.mean(np.abs(probs[:, -1, :] - val_targets).sum(axis=1)))
            else:
                val = train_loss
            history.append(
                {"step": step_idx, "train_loss": train_loss, "val_l1": val, "lr": opt.lr}
            )
            if val < best_val:
                best_val = val
                best_blocks = net.store.copy_blocks()
    net.store.load_blocks(best_blocks)
    return history
