"""Operational space control of an arm end-effector, verified on a 3-DOF arm.

Torques follow ``tau = J^T M_x xddot_des + g(q)`` with the task-space inertia
``M_x = (J M^-1 J^T)^-1`` and a PD rule for the desired acceleration; Coriolis
is deliberately omitted (pushes start from rest).  The bundled test arm is a
planar 3-link manipulator in a vertical plane with closed-form dynamics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import KinematicSingularity

KP_DEFAULT = 3000.0
KD_DEFAULT = 152.0
TASK_COND_LIMIT = 1e8


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def axis_angle_to_matrix(v: np.ndarray) -> np.ndarray:
    """Rodrigues formula; v is axis * angle."""
    angle = np.linalg.norm(v)
    if angle < 1e-12:
        return np.eye(3) + skew(v)
    axis = v / angle
    K = skew(axis)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def _quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) of a rotation matrix, w >= 0 (Shepperd)."""
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0.0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s,
             (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax([R[0, 0], R[1, 1], R[2, 2]]))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = 2.0 * np.sqrt(R[i, i] - R[j, j] - R[k, k] + 1.0)
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    if q[0] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def orientation_diff(R_des: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Rotation vector of ``R_des @ R.T``: zero iff the orientations agree.

    Extracted through a quaternion so the result stays accurate near a
    half-turn, where the axis sign is ambiguous; there the representative
    with a positive first nonzero component is returned.
    """
    q = _quat_from_matrix(R_des @ R.T)
    vec_norm = np.linalg.norm(q[1:])
    if vec_norm < 1e-12:
        return 2.0 * q[1:]  # first-order log at identity
    axis = q[1:] / vec_norm
    angle = 2.0 * np.arctan2(vec_norm, q[0])
    if q[0] < 1e-9:  # half-turn: pin the sign convention
        for comp in axis:
            if abs(comp) > 1e-12:
                if comp < 0:
                    axis = -axis
                break
    return angle * axis


@dataclass(frozen=True)
class EndEffectorTarget:
    """Desired pose and twist of the end-effector."""

    x_T_des: np.ndarray  # (3,) m
    x_R_des: np.ndarray  # (3, 3) rotation
    xdot_des: np.ndarray = field(default_factory=lambda: np.zeros(6))

    def __post_init__(self):
        R = np.asarray(self.x_R_des, dtype=float)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or np.linalg.det(R) < 0:
            raise ValueError("x_R_des must be a proper rotation")


@dataclass(frozen=True)
class ArmModel:
    """Arm description through callables, so any (test) arm plugs in.

    ``task_dims`` selects the controllable rows of the 6-row spatial Jacobian
    (all six for a spatial arm; a planar arm controls a 3-D sub-task so its
    task inertia stays invertible).
    """

    dof: int
    mass_matrix_fn: Callable[[np.ndarray], np.ndarray]
    gravity_fn: Callable[[np.ndarray], np.ndarray]
    jacobian_fn: Callable[[np.ndarray], np.ndarray]  # (6, dof)
    forward_kinematics_fn: Callable[[np.ndarray], tuple]
    task_dims: Sequence[int] = (0, 1, 2, 3, 4, 5)


def desired_accel(
    x: tuple,
    xdot: np.ndarray,
    target: EndEffectorTarget,
    k_p: float = KP_DEFAULT,
    k_d: float = KD_DEFAULT,
) -> np.ndarray:
    """PD rule for the 6-D end-effector acceleration from pose/twist errors."""
    pos, rot = x
    err = np.concatenate([target.x_T_des - pos, orientation_diff(target.x_R_des, rot)])
    return k_p * err + k_d * (target.xdot_des - xdot)


def task_space_mass(arm: ArmModel, q: np.ndarray) -> np.ndarray:
    """Task-space inertia ``(J M^-1 J^T)^-1`` on the arm's task rows."""
    J = arm.jacobian_fn(q)[list(arm.task_dims)]
    M = arm.mass_matrix_fn(q)
    A = J @ np.linalg.solve(M, J.T)
    A = 0.5 * (A + A.T)
    if np.linalg.cond(A) > TASK_COND_LIMIT:
        raise KinematicSingularity("task-space inertia not invertible at this pose")
    Mx = np.linalg.inv(A)
    return 0.5 * (Mx + Mx.T)


def osc_torque(arm: ArmModel, q: np.ndarray, xddot_des: np.ndarray) -> np.ndarray:
    """Joint torques realizing a desired end-effector acceleration.

    ``xddot_des`` is the full 6-D acceleration; rows outside the arm's task
    are ignored.  Gravity is compensated, Coriolis is not.
    """
    J = arm.jacobian_fn(q)[list(arm.task_dims)]
    Mx = task_space_mass(arm, q)
    xd = np.asarray(xddot_des, dtype=float)[list(arm.task_dims)]
    return J.T @ (Mx @ xd) + arm.gravity_fn(q)


# ---------------------------------------------------------------------------
# Planar 3-DOF verification arm (x-y vertical plane, gravity along -y).


class PlanarArm3:
    """Serial 3-link arm with closed-form M, C, g and spatial Jacobian.

    Rotations are about +z, so the in-plane task rows are (x, y, wz).
    """

    TASK_DIMS = (0, 1, 5)

    def __init__(self, lengths=(0.30, 0.25, 0.15), masses=(2.0, 1.5, 0.8), gravity=9.81):
        self.lengths = np.asarray(lengths, dtype=float)
        self.masses = np.asarray(masses, dtype=float)
        self.gravity = gravity
        self.izz = self.masses * self.lengths**2 / 12.0
        self.dof = 3

    def _frames(self, q):
        phi = np.cumsum(q)
        axes = np.stack([np.cos(phi), np.sin(phi)], axis=1)
        joints = np.zeros((4, 2))
        for k in range(3):
            joints[k + 1] = joints[k] + self.lengths[k] * axes[k]
        coms = joints[:3] + 0.5 * self.lengths[:, None] * axes
        return phi, axes, joints, coms

    def _com_jacobians(self, q):
        phi, axes, joints, coms = self._frames(q)
        J = np.zeros((3, 2, 3))
        for k in range(3):
            for j in range(k + 1):
                r = coms[k] - joints[j]
                J[k, :, j] = (-r[1], r[0])
        return J, phi, axes, joints, coms

    def mass_matrix(self, q):
        J, phi, axes, joints, coms = self._com_jacobians(q)
        M = np.einsum("k,kai,kaj->ij", self.masses, J, J)
        sel = np.tril(np.ones((3, 3)))  # link k rotates with joints 0..k
        M += np.einsum("k,ki,kj->ij", self.izz, sel, sel)
        return M

    def gravity_torque(self, q):
        # gradient of potential energy U = sum m_k g com_y
        J, *_ = self._com_jacobians(q)
        return self.gravity * np.einsum("k,ki->i", self.masses, J[:, 1, :])

    def coriolis(self, q, qdot):
        J, phi, axes, joints, coms = self._com_jacobians(q)
        jvel = np.zeros((4, 2))
        for j in range(1, 4):
            for i in range(j):
                r = joints[j] - joints[i]
                jvel[j] += qdot[i] * np.array([-r[1], r[0]])
        C = np.zeros(3)
        for k in range(3):
            vel = J[k] @ qdot
            bias = np.zeros(2)
            for j in range(k + 1):
                dv = vel - jvel[j]
                bias += qdot[j] * np.array([-dv[1], dv[0]])
            C += self.masses[k] * (J[k].T @ bias)
        return C

    def jacobian(self, q):
        phi, axes, joints, coms = self._frames(q)
        J = np.zeros((6, 3))
        tip = joints[3]
        for j in range(3):
            r = tip - joints[j]
            J[0, j] = -r[1]
            J[1, j] = r[0]
            J[5, j] = 1.0
        return J

    def forward_kinematics(self, q):
        phi, axes, joints, coms = self._frames(q)
        pos = np.array([joints[3][0], joints[3][1], 0.0])
        c, s = np.cos(phi[2]), np.sin(phi[2])
        R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return pos, R

    def as_model(self) -> ArmModel:
        return ArmModel(
            dof=3,
            mass_matrix_fn=self.mass_matrix,
            gravity_fn=self.gravity_torque,
            jacobian_fn=self.jacobian,
            forward_kinematics_fn=self.forward_kinematics,
            task_dims=self.TASK_DIMS,
        )

    def step(self, q, qdot, tau, dt=1e-3):
        """Semi-implicit step of the arm's true dynamics (with Coriolis)."""
        M = self.mass_matrix(q)
        rhs = tau - self.coriolis(q, qdot) - self.gravity_torque(q)
        qddot = np.linalg.solve(M, rhs)
        qdot = qdot + dt * qddot
        q = q + dt * qdot
        return q, qdot
