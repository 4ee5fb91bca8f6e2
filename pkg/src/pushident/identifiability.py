"""Which pushes can identify which link masses.

Each link contributes ``m_k A_k`` to the equations of motion; accelerations
inside A_k's null space carry no information about m_k.  The excitation score
normalizes ``|A_k qddot|`` so 0 marks an unidentifiable instant and 1 maximal
excitation of link k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chain import ChainModel, mass_matrix, unit_link_matrices
from .chain import kinematics as kin
from .errors import ZeroAcceleration
from .interaction import PushAction, PushCommand, resolve_action

RANK_TOL = 1e-9


def link_identifiability_matrix(model: ChainModel, q: np.ndarray, k: int) -> np.ndarray:
    """Per-unit-mass contribution A_k of link k to the mass matrix."""
    if not 0 <= k < model.n:
        raise ValueError(f"link index {k} out of range")
    return unit_link_matrices(model, q)[k]


def nullspace(A: np.ndarray, tol: float = RANK_TOL) -> np.ndarray:
    """Orthonormal basis of {v : |A v| <= tol |A|}, columns; empty if full rank."""
    A = np.asarray(A, dtype=float)
    _, s, vt = np.linalg.svd(A)
    if s.size == 0 or s[0] == 0.0:
        return np.eye(A.shape[1])
    mask = np.concatenate([s <= tol * s[0], np.ones(A.shape[1] - s.size, dtype=bool)])
    return vt[mask].T


def matrix_rank(A: np.ndarray, tol: float = RANK_TOL) -> int:
    s = np.linalg.svd(np.asarray(A, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > tol * s[0]))


def excitation_score(model: ChainModel, q: np.ndarray, qddot: np.ndarray) -> np.ndarray:
    """Per-link scores ``|A_k qddot| / (sigma_max(A_k) |qddot|)`` in [0, 1]."""
    qddot = np.asarray(qddot, dtype=float)
    norm = np.linalg.norm(qddot)
    if norm == 0.0:
        raise ZeroAcceleration("excitation score undefined for zero acceleration")
    A = unit_link_matrices(model, q)
    scores = np.empty(model.n)
    for k in range(model.n):
        smax = np.linalg.svd(A[k], compute_uv=False)[0]
        scores[k] = np.linalg.norm(A[k] @ qddot) / (smax * norm) if smax > 0 else 0.0
    return scores


@dataclass
class IdentifiabilityResult:
    """Ranks, null spaces and (optionally) excitation scores per link."""

    matrices: np.ndarray  # (n, N, N)
    ranks: list
    null_bases: list  # per link, (N, nullity) orthonormal columns
    scores: np.ndarray | None = None

    def nullity(self, k: int) -> int:
        return self.null_bases[k].shape[1]


def analyze(model: ChainModel, q: np.ndarray, qddot: np.ndarray | None = None,
            tol: float = RANK_TOL) -> IdentifiabilityResult:
    A = unit_link_matrices(model, q)
    ranks = [matrix_rank(A[k], tol) for k in range(model.n)]
    bases = [nullspace(A[k], tol) for k in range(model.n)]
    scores = excitation_score(model, q, qddot) if qddot is not None else None
    return IdentifiabilityResult(A, ranks, bases, scores)


def push_acceleration(model: ChainModel, q: np.ndarray, command: PushCommand) -> np.ndarray:
    """Instantaneous qddot caused by a unit push force at the command's contact.

    The chain is at rest, so friction and Coriolis vanish and the response is
    ``M^-1 J_p^T direction``.
    """
    coms, anchors, phi, axes = kin.chain_frames(model, q)
    point = (
        coms[command.link_index]
        + command.local_offset * axes[command.link_index]
        + command.side * 0.5 * model.widths[command.link_index]
        * kin.perp(axes[command.link_index])
    )
    Jp = kin.point_jacobian(model, command.link_index, point, anchors)
    Q = Jp.T @ command.direction
    return np.linalg.solve(mass_matrix(model, q), Q)


def identifiability_table(model: ChainModel, configurations, action_grid) -> list[dict]:
    """Rows of (configuration, link, rank, nullity, action, score) for the CLI.

    ``action_grid`` is an iterable of (a1, a2) pairs; each is resolved to a
    push at the given configuration and scored through its induced
    instantaneous acceleration.
    """
    rows = []
    for ci, q in enumerate(configurations):
        res = analyze(model, q)
        for (a1, a2) in action_grid:
            command = resolve_action(model, q, PushAction(a1, a2))
            qddot = push_acceleration(model, q, command)
            scores = excitation_score(model, q, qddot)
            for k in range(model.n):
                rows.append(
                    {
                        "config": ci,
                        "q": " ".join(repr(float(v)) for v in q),
                        "link": k,
                        "rank": res.ranks[k],
                        "nullity": res.nullity(k),
                        "a1": a1,
                        "a2": a2,
                        "score": float(scores[k]),
                    }
                )
    return rows
