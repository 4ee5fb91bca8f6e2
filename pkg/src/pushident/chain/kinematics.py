"""Planar kinematics of the chain: frames, Jacobians and their derivatives.

Conventions: link k has orientation ``phi_k = alpha + theta_1 + .. + theta_k``
and its COM sits half a length beyond the joint that attaches it.  Jacobians
are kept planar (2 rows linear, 1 row angular about z); the spatial 6-row
embedding used for inertia bookkeeping has the out-of-plane rows zero.
"""

from __future__ import annotations

import numpy as np

from .model import ChainModel


def perp(v: np.ndarray) -> np.ndarray:
    """90-degree CCW rotation of planar vectors (last axis = 2)."""
    out = np.empty_like(v)
    out[..., 0] = -v[..., 1]
    out[..., 1] = v[..., 0]
    return out


def link_angles(model: ChainModel, q: np.ndarray) -> np.ndarray:
    """World orientation of each link, ``phi_k = alpha + sum(theta_1..k)``."""
    phi = np.empty(model.n)
    phi[0] = q[2]
    for k in range(1, model.n):
        phi[k] = phi[k - 1] + q[2 + k]
    return phi


def chain_frames(model: ChainModel, q: np.ndarray):
    """COM positions, joint anchor positions and link axes for a configuration.

    Returns:
        coms: (n, 2) link COM positions.
        anchors: (n, 2) rotation anchors per angle coordinate; ``anchors[0]``
            is the root COM (yaw pivot in these coordinates), ``anchors[i]``
            the position of revolute joint i for i >= 1.
        axes: (n, 2) unit vectors along each link's long axis.
        phi: (n,) link orientations.
    """
    n = model.n
    phi = link_angles(model, q)
    axes = np.stack([np.cos(phi), np.sin(phi)], axis=1)
    coms = np.empty((n, 2))
    anchors = np.empty((n, 2))
    coms[0] = q[:2]
    anchors[0] = q[:2]
    for k in range(1, n):
        anchors[k] = coms[k - 1] + 0.5 * model.lengths[k - 1] * axes[k - 1]
        coms[k] = anchors[k] + 0.5 * model.lengths[k] * axes[k]
    return coms, anchors, phi, axes


def angular_selector(model: ChainModel) -> np.ndarray:
    """(n, N) rows of the z-angular Jacobian: link k spins with alpha and theta_{1..k}."""
    n, N = model.n, model.ndof
    sel = np.zeros((n, N))
    sel[:, 2] = 1.0
    for k in range(1, n):
        sel[k:, 2 + k] = 1.0
    return sel


def point_jacobian(
    model: ChainModel, link: int, point: np.ndarray, anchors: np.ndarray
) -> np.ndarray:
    """(2, N) planar Jacobian of a material point on ``link`` at world position ``point``."""
    N = model.ndof
    J = np.zeros((2, N))
    J[0, 0] = 1.0
    J[1, 1] = 1.0
    for i in range(link + 1):
        J[:, 2 + i] = perp(point - anchors[i])
    return J


def com_jacobians(model: ChainModel, q: np.ndarray):
    """Planar COM Jacobians for every link.

    Returns (J, coms, anchors, phi, axes) with J of shape (n, 2, N).
    """
    coms, anchors, phi, axes = chain_frames(model, q)
    n, N = model.n, model.ndof
    J = np.zeros((n, 2, N))
    J[:, 0, 0] = 1.0
    J[:, 1, 1] = 1.0
    for k in range(n):
        for i in range(k + 1):
            J[k, :, 2 + i] = perp(coms[k] - anchors[i])
    return J, coms, anchors, phi, axes


def anchor_jacobians(model: ChainModel, anchors: np.ndarray) -> np.ndarray:
    """(n, 2, N) Jacobians of the rotation anchors themselves.

    ``anchors[i]`` is a material point of link i-1 (the shared hinge point for
    i >= 1), so its Jacobian only involves angle coordinates up to i-1.
    """
    n, N = model.n, model.ndof
    Ja = np.zeros((n, 2, N))
    Ja[:, 0, 0] = 1.0
    Ja[:, 1, 1] = 1.0
    for i in range(1, n):
        for j in range(i):
            Ja[i, :, 2 + j] = perp(anchors[i] - anchors[j])
    return Ja


def com_velocities(model: ChainModel, q: np.ndarray, qdot: np.ndarray):
    """COM velocities and angular rates; also returns frames for reuse."""
    J, coms, anchors, phi, axes = com_jacobians(model, q)
    vel = J @ qdot
    omega = angular_selector(model) @ qdot
    return vel, omega, J, coms, anchors, phi, axes


def com_bias_accelerations(model: ChainModel, q: np.ndarray, qdot: np.ndarray):
    """COM accelerations with qddot = 0 (the J_dot @ qdot term).

    Differentiating ``pdot = (xd, yd) + sum_i qd_i * perp(p - anchor_i)`` at
    fixed qdot gives ``a_bias = sum_i qd_i * perp(pdot - anchor_i_dot)``.
    """
    vel, omega, J, coms, anchors, phi, axes = com_velocities(model, q, qdot)
    Ja = anchor_jacobians(model, anchors)
    avel = np.einsum("kij,j->ki", Ja, qdot)
    n = model.n
    bias = np.zeros((n, 2))
    for k in range(n):
        for i in range(k + 1):
            bias[k] += qdot[2 + i] * perp(vel[k] - avel[i])
    return bias, vel, omega, J, coms, anchors, phi, axes


def mass_matrix_partials(model: ChainModel, q: np.ndarray) -> np.ndarray:
    """Analytic dM/dq, shape (N, N, N); entry [r] is dM/dq_r.

    Only angle coordinates enter M, so the x/y slabs are zero.  Column c of a
    COM Jacobian is ``perp(com - anchor_c)``; its partial along q_r is
    ``perp(J_com[:, r] - J_anchor_c[:, r])``.
    """
    J, coms, anchors, phi, axes = com_jacobians(model, q)
    Ja = anchor_jacobians(model, anchors)
    n, N = model.n, model.ndof
    dM = np.zeros((N, N, N))
    for k in range(n):
        m_k = model.masses[k]
        Jk = J[k]
        for r in range(2, N):
            dJk = np.zeros((2, N))
            for i in range(k + 1):
                c = 2 + i
                dJk[:, c] = perp(Jk[:, r] - Ja[i, :, r])
            dM[r] += m_k * (dJk.T @ Jk + Jk.T @ dJk)
    return dM


def sample_points(model: ChainModel, k: int, coms: np.ndarray, axes: np.ndarray,
                  count: int) -> np.ndarray:
    """Evenly spaced friction sample points along link k's long axis, (count, 2)."""
    offsets = np.linspace(-0.5, 0.5, count) * model.lengths[k]
    return coms[k][None, :] + offsets[:, None] * axes[k][None, :]
