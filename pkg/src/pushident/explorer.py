"""Recurrent push policy trained with PPO against a frozen predictor.

The policy sees only noisy equilibrium poses; its reward is how close the
frozen predictor's current estimate lands to the true mass distribution, so
pushes that reveal the distribution score higher.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import sample_chain
from .errors import EpisodeFailure
from .estimator import MassPredictor
from .interaction import (
    PushAction,
    encode_configuration,
    encode_push_response,
    execute_push,
    initial_configuration,
    observation_dim,
    resolve_action,
)
from .nn import LSTM, Adam, Dense, ParameterStore

LOG_STD_MIN = -5.0
LOG_STD_MAX = 1.0
LOG_STD_INIT = -0.5
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


def _log1m_tanh2(u: np.ndarray) -> np.ndarray:
    """log(1 - tanh(u)^2), stable for large |u|."""
    return 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def reward(m_true: np.ndarray, m_hat: np.ndarray, beta: float = 1.0) -> float:
    """1 - beta * L1(m_true, m_hat); in [1 - 2*beta, 1] on the simplex."""
    return float(1.0 - beta * np.abs(np.asarray(m_true) - np.asarray(m_hat)).sum())


class PushPolicy:
    """Gaussian push policy with tanh squashing and a value head."""

    def __init__(self, n_links: int, rng: np.random.Generator, hidden: int = 64,
                 lstm_width: int = 64):
        self.n_links = n_links
        self.obs_dim = observation_dim(n_links)
        self.store = ParameterStore()
        self.enc1 = Dense(self.store, "enc1", self.obs_dim, hidden, rng, relu=True)
        self.enc2 = Dense(self.store, "enc2", hidden, hidden, rng, relu=True)
        self.core = LSTM(self.store, "core", hidden, lstm_width, rng)
        self.actor = Dense(self.store, "actor", lstm_width, 2, rng)
        self.critic = Dense(self.store, "critic", lstm_width, 1, rng)
        self.log_std = self.store.add("log_std", np.full(2, LOG_STD_INIT))

    def initial_state(self, batch: int = 1):
        return self.core.initial_state(batch)

    def clamp_log_std(self) -> None:
        np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)

    def forward_step(self, obs: np.ndarray, h: np.ndarray, c: np.ndarray):
        """(mean, value, h', c', cache) for a batch of observations."""
        e1, c1 = self.enc1.forward(np.atleast_2d(obs))
        e2, c2 = self.enc2.forward(e1)
        h_new, c_new, c_core = self.core.step(e2, h, c)
        mean, c_act = self.actor.forward(h_new)
        value, c_val = self.critic.forward(h_new)
        cache = (c1, c2, c_core, c_act, c_val)
        return mean, value[:, 0], h_new, c_new, cache

    def log_prob_from_pretanh(self, mean: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Log density of action tanh(u), including the tanh change of variables."""
        std = np.exp(self.log_std)
        z = (u - mean) / std
        gauss = -0.5 * z**2 - self.log_std - _HALF_LOG_2PI
        return (gauss - _log1m_tanh2(u)).sum(axis=-1)

    def action_log_density(self, mean: np.ndarray, action: np.ndarray) -> float:
        """Log density directly over the squashed action (for quadrature checks)."""
        a = np.clip(np.asarray(action, dtype=float), -1 + 1e-12, 1 - 1e-12)
        u = np.arctanh(a)
        return float(self.log_prob_from_pretanh(np.atleast_2d(mean), np.atleast_2d(u))[0])

    def entropy(self) -> float:
        """Entropy of the pre-squash Gaussian (the exploration bonus term)."""
        return float(np.sum(self.log_std + 0.5 * np.log(2.0 * np.pi * np.e)))

    def sample(self, obs: np.ndarray, h, c, rng: np.random.Generator,
               deterministic: bool = False):
        """One action from one observation; returns
        (action(2,), pre_tanh(2,), log_prob, value, h', c')."""
        mean, value, h_new, c_new, _ = self.forward_step(obs[None, :], h, c)
        if deterministic:
            u = mean[0]
        else:
            u = mean[0] + np.exp(self.log_std) * rng.standard_normal(2)
        a = np.tanh(u)
        lp = float(self.log_prob_from_pretanh(mean, u[None, :])[0])
        return a, u, lp, float(value[0]), h_new, c_new


class PolicyActionSource:
    """Adapter so a PushPolicy can drive interaction.rollout_episode."""

    def __init__(self, policy: PushPolicy, deterministic: bool = False):
        self.policy = policy
        self.deterministic = deterministic
        self.reset()

    def reset(self):
        self._h, self._c = self.policy.initial_state(1)
        self._origin = None

    def __call__(self, obs_q: np.ndarray, rng: np.random.Generator) -> PushAction:
        if self._origin is None:
            self._origin = np.asarray(obs_q[:3], dtype=float).copy()
        enc = encode_configuration(obs_q, self._origin)
        a, _, _, _, self._h, self._c = self.policy.sample(
            enc, self._h, self._c, rng, self.deterministic
        )
        return PushAction(float(a[0]), float(a[1]))


class PushEnv:
    """One-chain episodic environment: observe at rest, push, observe again.

    The frozen predictor runs in lockstep; each step's reward is its current
    estimate scored against the hidden ground truth.
    """

    def __init__(self, n_links: int, mass_range, mu_range, length_range,
                 pushes: int, noise_std: float, predictor: MassPredictor,
                 beta: float = 1.0, joint_limit: float = 2.6):
        self.n_links = n_links
        self.mass_range = mass_range
        self.mu_range = mu_range
        self.length_range = length_range
        self.pushes = pushes
        self.noise_std = noise_std
        self.predictor = predictor
        self.beta = beta
        self.joint_limit = joint_limit

    def reset(self, seed) -> np.ndarray:
        self.rng = np.random.default_rng(np.random.SeedSequence(seed))
        self.model = sample_chain(
            self.rng, self.n_links, self.mass_range, self.mu_range,
            self.length_range, joint_limit=self.joint_limit,
        )
        self.state = initial_configuration(self.model, self.rng)
        self.t = 0
        obs = self.state.q + self.noise_std * self.rng.standard_normal(self.model.ndof)
        self._origin = obs[:3].copy()
        self._obs_q = obs
        self._ph, self._pc = self.predictor.initial_state(1)
        return encode_configuration(obs, self._origin)

    def step(self, action: np.ndarray):
        """Execute a (pre-noise) action; returns (obs, reward, done, info)."""
        noisy = PushAction(
            float(action[0]) + self.noise_std * self.rng.standard_normal(),
            float(action[1]) + self.noise_std * self.rng.standard_normal(),
        ).clamped()
        command = resolve_action(self.model, self.state.q, noisy)
        self.state = execute_push(self.model, self.state, command)
        obs_next = self.state.q + self.noise_std * self.rng.standard_normal(self.model.ndof)
        step_input = encode_push_response(
            self._obs_q, noisy.as_array(), obs_next, self.model.n
        )
        m_hat, self._ph, self._pc = self.predictor.forward_step(
            step_input, self._ph, self._pc
        )
        r = reward(self.model.mass_fractions, m_hat[0], self.beta)
        self.t += 1
        self._obs_q = obs_next
        done = self.t >= self.pushes
        info = {"l1_error": float(np.abs(self.model.mass_fractions - m_hat[0]).sum())}
        return encode_configuration(obs_next, self._origin), r, done, info


@dataclass
class RolloutBuffer:
    """Flat per-step rollout storage across parallel environments."""

    obs: np.ndarray        # (W, T, obs_dim)
    pre_tanh: np.ndarray   # (W, T, 2)
    log_probs: np.ndarray  # (W, T)
    values: np.ndarray     # (W, T)
    rewards: np.ndarray    # (W, T)
    dones: np.ndarray      # (W, T) 1.0 at episode-terminal steps
    h_snap: np.ndarray     # (W, T, H) recurrent state entering each step
    c_snap: np.ndarray     # (W, T, H)
    l1_errors: np.ndarray  # (W, T)
    episode_len: int

    @property
    def n_steps(self) -> int:
        return self.obs.shape[0] * self.obs.shape[1]


def collect_rollouts(policy: PushPolicy, envs: list, episodes_per_env: int,
                     seed_fn, rng: np.random.Generator) -> RolloutBuffer:
    """Run every env for a whole number of episodes under the current policy.

    ``seed_fn(env_idx, episode_idx)`` supplies deterministic episode seeds.
    Episodes that fail to settle are redrawn with a perturbed seed.
    """
    W = len(envs)
    E = envs[0].pushes
    T = episodes_per_env * E
    H = policy.core.hidden
    buf = RolloutBuffer(
        obs=np.zeros((W, T, policy.obs_dim)),
        pre_tanh=np.zeros((W, T, 2)),
        log_probs=np.zeros((W, T)),
        values=np.zeros((W, T)),
        rewards=np.zeros((W, T)),
        dones=np.zeros((W, T)),
        h_snap=np.zeros((W, T, H)),
        c_snap=np.zeros((W, T, H)),
        l1_errors=np.zeros((W, T)),
        episode_len=E,
    )
    for w, env in enumerate(envs):
        t = 0
        for epi in range(episodes_per_env):
            for attempt in range(20):
                try:
                    obs = env.reset((*seed_fn(w, epi), attempt))
                    h, c = policy.initial_state(1)
                    rows = []
                    for k in range(E):
                        a, u, lp, v, h_next, c_next = policy.sample(obs, h, c, rng)
                        obs_next, r, done, info = env.step(a)
                        rows.append((obs, u, lp, v, r, done, h[0], c[0], info["l1_error"]))
                        obs, h, c = obs_next, h_next, c_next
                    break
                except EpisodeFailure:
                    continue
            else:
                raise EpisodeFailure("too many failed episodes in rollout")
            for row in rows:
                (buf.obs[w, t], buf.pre_tanh[w, t], buf.log_probs[w, t],
                 buf.values[w, t], buf.rewards[w, t], done, buf.h_snap[w, t],
                 buf.c_snap[w, t], buf.l1_errors[w, t]) = row
                buf.dones[w, t] = 1.0 if done else 0.0
                t += 1
    return buf


def compute_gae(buffer: RolloutBuffer, gamma: float = 0.99, lam: float = 0.95,
                normalize: bool = True):
    """Generalized advantage estimates and returns.

    Terminal steps bootstrap with value 0 (episodes end there).  Advantages
    are normalized to zero mean / unit variance per update batch unless raw
    values are requested.
    """
    W, T = buffer.rewards.shape
    adv = np.zeros((W, T))
    for w in range(W):
        acc = 0.0
        next_value = 0.0
        for t in reversed(range(T)):
            nonterminal = 1.0 - buffer.dones[w, t]
            delta = (
                buffer.rewards[w, t]
                + gamma * next_value * nonterminal
                - buffer.values[w, t]
            )
            acc = delta + gamma * lam * nonterminal * acc
            adv[w, t] = acc
            next_value = buffer.values[w, t]
    returns = adv + buffer.values
    if normalize:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, returns


@dataclass
class PPOConfig:
    clip: float = 0.2
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    epochs: int = 4
    minibatches: int = 4
    learning_rate: float = 1e-4
    gamma: float = 0.99
    lam: float = 0.95
    max_grad_norm: float = 0.5


def evaluate_episodes(policy: PushPolicy, buffer: RolloutBuffer, episode_ids):
    """Recompute (log_probs, values, caches) for whole episodes from zero state."""
    E = buffer.episode_len
    W = buffer.obs.shape[0]
    results = []
    for (w, epi) in episode_ids:
        sl = slice(epi * E, (epi + 1) * E)
        h, c = policy.initial_state(1)
        lps = np.empty(E)
        vals = np.empty(E)
        caches = []
        for k in range(E):
            t = epi * E + k
            mean, value, h, c, cache = policy.forward_step(buffer.obs[w, t][None, :], h, c)
            lps[k] = policy.log_prob_from_pretanh(mean, buffer.pre_tanh[w, t][None, :])[0]
            vals[k] = value[0]
            caches.append((cache, mean))
        results.append((w, epi, lps, vals, caches))
    return results


def ppo_update(policy: PushPolicy, buffer: RolloutBuffer, optimizer: Adam,
               config: PPOConfig, rng: np.random.Generator) -> dict:
    """Clipped-surrogate update over recurrent minibatches cut at episode bounds."""
    advantages, returns = compute_gae(buffer, config.gamma, config.lam)
    W, T = buffer.rewards.shape
    E = buffer.episode_len
    episodes = [(w, epi) for w in range(W) for epi in range(T // E)]
    clip_count = 0
    total_evals = 0
    last_policy_loss = 0.0
    last_value_loss = 0.0
    for _ in range(config.epochs):
        order = rng.permutation(len(episodes))
        for chunk in np.array_split(order, config.minibatches):
            if len(chunk) == 0:
                continue
            batch = [episodes[i] for i in chunk]
            policy.store.zero_grads()
            stats = _minibatch_backward(
                policy, buffer, advantages, returns, batch, config
            )
            _clip_gradients(policy.store, config.max_grad_norm)
            optimizer.step()
            policy.clamp_log_std()
            clip_count += stats["clipped"]
            total_evals += stats["count"]
            last_policy_loss = stats["policy_loss"]
            last_value_loss = stats["value_loss"]
    return {
        "mean_reward": float(buffer.rewards.mean()),
        "mean_l1_error": float(buffer.l1_errors.mean()),
        "entropy": policy.entropy(),
        "clip_fraction": clip_count / max(total_evals, 1),
        "policy_loss": last_policy_loss,
        "value_loss": last_value_loss,
    }


def _clip_gradients(store: ParameterStore, max_norm: float) -> None:
    total = np.sqrt(sum(float(np.sum(g**2)) for g in store.grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in store.grads.values():
            g *= scale


def minibatch_loss(policy, buffer, advantages, returns, batch, config) -> float:
    """Forward-only PPO minibatch loss (for finite-difference verification)."""
    E = buffer.episode_len
    count = len(batch) * E
    total = 0.0
    for (w, epi) in batch:
        h, c = policy.initial_state(1)
        for k in range(E):
            t = epi * E + k
            mean, value, h, c, _ = policy.forward_step(
                buffer.obs[w, t][None, :], h, c
            )
            lp_new = policy.log_prob_from_pretanh(mean, buffer.pre_tanh[w, t][None, :])[0]
            ratio = np.exp(lp_new - buffer.log_probs[w, t])
            A = advantages[w, t]
            surr = min(ratio * A, np.clip(ratio, 1 - config.clip, 1 + config.clip) * A)
            total += -surr / count
            total += config.value_coef * float((value[0] - returns[w, t]) ** 2) / count
    return total - config.entropy_coef * policy.entropy()


def _minibatch_backward(policy, buffer, advantages, returns, batch, config) -> dict:
    """Forward/backward one minibatch of episodes; accumulates gradients."""
    E = buffer.episode_len
    count = len(batch) * E
    clipped = 0
    policy_loss = 0.0
    value_loss = 0.0
    std = np.exp(policy.log_std)
    g_log_std = policy.store.grads["log_std"]
    for (w, epi) in batch:
        h, c = policy.initial_state(1)
        steps = []
        for k in range(E):
            t = epi * E + k
            mean, value, h, c, cache = policy.forward_step(
                buffer.obs[w, t][None, :], h, c
            )
            steps.append((t, mean, value, cache))
        dh = np.zeros((1, policy.core.hidden))
        dc = np.zeros((1, policy.core.hidden))
        for k in reversed(range(E)):
            t, mean, value, cache = steps[k]
            c1, c2, c_core, c_act, c_val = cache
            u = buffer.pre_tanh[w, t][None, :]
            lp_new = policy.log_prob_from_pretanh(mean, u)[0]
            ratio = np.exp(lp_new - buffer.log_probs[w, t])
            A = advantages[w, t]
            surr1 = ratio * A
            surr2 = np.clip(ratio, 1.0 - config.clip, 1.0 + config.clip) * A
            use_unclipped = surr1 <= surr2
            if not use_unclipped:
                clipped += 1
            policy_loss += -min(surr1, surr2) / count
            # d(-min)/dlog_prob
            dlp = (-ratio * A / count) if use_unclipped else 0.0
            z = (u[0] - mean[0]) / std
            dmean = dlp * (z / std)
            g_log_std += dlp * (z**2 - 1.0)
            g_log_std -= config.entropy_coef / count  # entropy bonus
            verr = value[0] - returns[w, t]
            value_loss += float(verr**2) / count
            dvalue = config.value_coef * 2.0 * verr / count
            dh_actor = policy.actor.backward(dmean[None, :], c_act)
            dh_critic = policy.critic.backward(np.array([[dvalue]]), c_val)
            de2, dh, dc = policy.core.backward_step(
                dh + dh_actor + dh_critic, dc, c_core
            )
            de1 = policy.enc2.backward(de2, c2)
            policy.enc1.backward(de1, c1)
    return {
        "count": count,
        "clipped": clipped,
        "policy_loss": policy_loss,
        "value_loss": value_loss,
    }


def train_policy(
    predictor: MassPredictor,
    policy: PushPolicy,
    env_factory,
    total_env_steps: int,
    workers: int,
    steps_per_worker: int,
    config: PPOConfig,
    base_seed,
) -> list[dict]:
    """PPO against the frozen predictor; returns one metrics row per update."""
    envs = [env_factory() for _ in range(workers)]
    E = envs[0].pushes
    episodes_per_env = max(steps_per_worker // E, 1)
    steps_per_update = workers * episodes_per_env * E
    n_updates = max(total_env_steps // steps_per_update, 1)
    optimizer = Adam(policy.store, lr=config.learning_rate)
    seed_tuple = base_seed if isinstance(base_seed, tuple) else (base_seed,)
    rng = np.random.default_rng(np.random.SeedSequence((*seed_tuple, 777)))
    history = []
    for update in range(n_updates):
        def seed_fn(w, epi, _update=update):
            return (*seed_tuple, _update, w, epi)
        buffer = collect_rollouts(policy, envs, episodes_per_env, seed_fn, rng)
        stats = ppo_update(policy, buffer, optimizer, config, rng)
        stats["update"] = update
        stats["env_steps"] = (update + 1) * steps_per_update
        history.append(stats)
    return history
