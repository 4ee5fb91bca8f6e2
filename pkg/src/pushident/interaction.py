"""Decode 2-D policy actions into physical pushes and roll out episodes.

An episode alternates observe / push / settle: the chain is only ever seen
and touched at rest.  Observations and executed actions carry i.i.d. Gaussian
noise; the ground-truth mass distribution rides along for supervision.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .chain import ChainModel, ChainState, push_window, settle
from .chain import dynamics as dyn
from .chain import kinematics as kin
from .errors import EpisodeFailure, SettleTimeout

SPEED_RANGE = (0.1, 1.0)  # m/s, push speed for |a1| in [0, 1]
OFFSET_FRACTION = 0.9  # usable fraction of each half-length
PUSH_CONTROL_STEPS = 10
SUBSTEPS_PER_CONTROL = 10
INIT_JOINT_FRACTION = 0.8  # initial joints stay within 80% of their limits
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class PushAction:
    """Raw policy action; both components live in [-1, 1]."""

    a1: float
    a2: float

    def clamped(self) -> "PushAction":
        return PushAction(float(np.clip(self.a1, -1, 1)), float(np.clip(self.a2, -1, 1)))

    def as_array(self) -> np.ndarray:
        return np.array([self.a1, self.a2])


@dataclass(frozen=True)
class PushCommand:
    """Resolved physical push: where to strike and how fast."""

    link_index: int
    local_offset: float  # m along the link long axis from its COM
    side: int  # +1/-1: which long face is struck
    speed: float  # m/s
    direction: np.ndarray  # world-frame unit normal pointing into the link


def action_partition(n: int, action: PushAction):
    """Geometry of an action under the per-link partition of the a2 axis.

    Returns (link, along, side, speed) with ``along`` in [-1, 1] spanning the
    usable part of the link's long axis.
    """
    action = action.clamped()
    width = 2.0 / n
    link = min(int((action.a2 + 1.0) / width), n - 1)
    t = ((action.a2 + 1.0) - link * width) / width
    along = 2.0 * t - 1.0
    side = 1 if action.a1 >= 0.0 else -1
    lo, hi = SPEED_RANGE
    speed = lo + abs(action.a1) * (hi - lo)
    return link, along, side, speed


def resolve_action(model: ChainModel, q: np.ndarray, action: PushAction) -> PushCommand:
    """Map an action to a push on the chain as currently posed.

    ``a2``'s range is split into one equal sub-interval per link, the position
    inside the sub-interval selects the point along the link; the sign of
    ``a1`` picks the face and its magnitude the speed.
    """
    link, along, side, speed = action_partition(model.n, action)
    local_offset = along * OFFSET_FRACTION * 0.5 * model.lengths[link]
    _, _, _, axes = kin.chain_frames(model, q)
    direction = -side * kin.perp(axes[link])
    return PushCommand(link, float(local_offset), side, float(speed), direction)


def execute_push(model: ChainModel, state: ChainState, command: PushCommand) -> ChainState:
    """Deliver a push with the kinematic pusher and settle back to rest.

    The pusher imposes ``speed * direction`` at the contact point for 10
    control steps of 10 dynamics sub-steps each; contact is one-sided.
    """
    pushed = push_window(
        model,
        state,
        command.link_index,
        command.local_offset,
        command.side,
        command.direction,
        command.speed,
        PUSH_CONTROL_STEPS,
        SUBSTEPS_PER_CONTROL,
    )
    settled, _ = settle(model, pushed)
    return settled


def initial_configuration(model: ChainModel, rng: np.random.Generator) -> ChainState:
    """Random rest configuration: root at origin, uniform yaw, joints inside limits.

    3-link samples are redrawn until the non-adjacent capsules are separated.
    """
    for _ in range(100):
        q = np.zeros(model.ndof)
        q[2] = rng.uniform(-np.pi, np.pi)
        for j in range(model.n - 1):
            lo, hi = model.joint_limits[j] * INIT_JOINT_FRACTION
            q[3 + j] = rng.uniform(lo, hi)
        coms, anchors, phi, axes = kin.chain_frames(model, q)
        if not dyn._collision_contacts(model, coms, anchors, axes):
            return ChainState(q)
    raise EpisodeFailure("could not sample a collision-free initial configuration")


class UniformRandomSource:
    """Action source that ignores observations (the random baseline policy)."""

    def reset(self):
        pass

    def __call__(self, obs: np.ndarray, rng: np.random.Generator) -> PushAction:
        return PushAction(float(rng.uniform(-1, 1)), float(rng.uniform(-1, 1)))


@dataclass
class EpisodeTrajectory:
    """Observed (noisy) pushes and poses of one episode plus its ground truth."""

    q_seq: np.ndarray  # (E+1, N) noisy equilibrium observations
    a_seq: np.ndarray  # (E, 2) noisy executed actions
    m_true: np.ndarray  # (n,) exact normalized masses
    n: int
    mu: float
    lengths: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.q_seq = np.asarray(self.q_seq, dtype=float)
        self.a_seq = np.asarray(self.a_seq, dtype=float)
        self.m_true = np.asarray(self.m_true, dtype=float)
        self.lengths = np.asarray(self.lengths, dtype=float)
        if len(self.q_seq) != len(self.a_seq) + 1:
            raise ValueError("q_seq must have one more entry than a_seq")
        if abs(self.m_true.sum() - 1.0) > 1e-9:
            raise ValueError("m_true must sum to 1")

    @property
    def pushes(self) -> int:
        return len(self.a_seq)

    def to_record(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "n": self.n,
            "mu": self.mu,
            "lengths": self.lengths.tolist(),
            "m_true": self.m_true.tolist(),
            "q_seq": self.q_seq.tolist(),
            "a_seq": self.a_seq.tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_record(cls, record: dict) -> "EpisodeTrajectory":
        if record.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported episode schema {record.get('schema_version')}")
        return cls(
            q_seq=record["q_seq"],
            a_seq=record["a_seq"],
            m_true=record["m_true"],
            n=record["n"],
            mu=record["mu"],
            lengths=record["lengths"],
            seed=record["seed"],
        )


def rollout_episode(
    model: ChainModel,
    policy,
    pushes: int,
    noise_std: float,
    rng: np.random.Generator,
    seed: int = 0,
) -> EpisodeTrajectory:
    """Run one observe-push-settle episode and record its noisy trace.

    ``policy`` maps a noisy observation to a PushAction (with an optional
    ``reset()`` called first); observation and action noise share
    ``noise_std``.  Settle timeouts surface as EpisodeFailure.
    """
    if pushes < 1:
        raise ValueError("an episode needs at least one push")
    if hasattr(policy, "reset"):
        policy.reset()
    state = initial_configuration(model, rng)
    N = model.ndof
    q_seq = np.empty((pushes + 1, N))
    a_seq = np.empty((pushes, 2))
    obs = state.q + noise_std * rng.standard_normal(N)
    q_seq[0] = obs
    try:
        for t in range(pushes):
            action = policy(obs, rng)
            noisy = PushAction(
                action.a1 + noise_std * rng.standard_normal(),
                action.a2 + noise_std * rng.standard_normal(),
            ).clamped()
            a_seq[t] = (noisy.a1, noisy.a2)
            command = resolve_action(model, state.q, noisy)
            state = execute_push(model, state, command)
            obs = state.q + noise_std * rng.standard_normal(N)
            q_seq[t + 1] = obs
    except SettleTimeout as exc:
        raise EpisodeFailure("settle timed out during episode") from exc
    return EpisodeTrajectory(
        q_seq=q_seq,
        a_seq=a_seq,
        m_true=model.mass_fractions,
        n=model.n,
        mu=model.mu,
        lengths=model.lengths,
        seed=seed,
    )


def rotate_into_frame(v: np.ndarray, yaw: float) -> np.ndarray:
    """Express a world-frame planar vector in a frame at the given yaw."""
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([c * v[0] + s * v[1], -s * v[0] + c * v[1]])


def encode_configuration(q: np.ndarray, origin_pose: np.ndarray) -> np.ndarray:
    """Network features of a pose relative to the episode-start frame.

    The root translation is rotated into the start frame and the yaw taken
    relative to the start yaw, so the features are invariant to where and at
    what heading the episode began; angles become (sin, cos) pairs to remove
    the 2-pi wrap.
    """
    q = np.asarray(q, dtype=float)
    out = np.empty(2 + 2 * (q.size - 2))
    out[:2] = rotate_into_frame(q[:2] - origin_pose[:2], origin_pose[2])
    rel_yaw = q[2] - origin_pose[2]
    out[2] = np.sin(rel_yaw)
    out[3] = np.cos(rel_yaw)
    joints = q[3:]
    out[4::2] = np.sin(joints)
    out[5::2] = np.cos(joints)
    return out


def observation_dim(n: int) -> int:
    """Feature length of one encoded pose for an n-link chain."""
    return 2 + 2 * n  # relative x, y plus (sin, cos) of relative yaw and joints


def encode_push_response(q_t: np.ndarray, action: np.ndarray, q_t1: np.ndarray,
                         n: int) -> np.ndarray:
    """Predictor features of one push step, all in the object's own frame.

    The pose change is expressed in the pre-push body frame (where the push
    itself is defined), joint angles give the shape before and after, and the
    action appears both raw and decoded through the partition so the network
    does not have to relearn the action-space geometry.
    """
    delta = rotate_into_frame(q_t1[:2] - q_t[:2], q_t[2])
    dyaw = q_t1[2] - q_t[2]
    link, along, side, speed = action_partition(
        n, PushAction(float(action[0]), float(action[1]))
    )
    onehot = np.zeros(n)
    onehot[link] = 1.0
    return np.concatenate(
        [
            delta,
            [np.sin(dyaw), np.cos(dyaw)],
            np.sin(q_t[3:]), np.cos(q_t[3:]),
            np.sin(q_t1[3:]), np.cos(q_t1[3:]),
            action,
            onehot,
            [along, float(side), speed],
        ]
    )


def push_response_dim(n: int) -> int:
    """Feature length of one predictor step for an n-link chain."""
    return 4 + 4 * (n - 1) + 2 + n + 3


def save_episodes(path, episodes) -> None:
    """Write episodes as line-delimited JSON records (full float precision)."""
    with open(path, "w") as fh:
        for ep in episodes:
            fh.write(json.dumps(ep.to_record()) + "\n")


def load_episodes(path) -> list:
    with open(path) as fh:
        return [EpisodeTrajectory.from_record(json.loads(line)) for line in fh if line.strip()]
