"""Forward dynamics of the chain on a frictional plane (reference backend).

Equations of motion in generalized coordinates: ``M(q) qddot + C(q, qdot) =
Q_ext + Q_friction``, integrated with semi-implicit Euler and impulse-based
joint-limit / self-collision resolution.

This module is the pure-numpy reference; the compiled backend in
``_speedups`` mirrors these formulas step for step and is cross-checked by
tests.  Use :mod:`pushident.chain.backend` for the dispatching entry points.
"""

from __future__ import annotations

import numpy as np

from ..errors import SettleTimeout, SingularMassMatrix
from .model import ChainModel, ChainState
from . import kinematics as kin

DT = 1e-3  # s, dynamics timestep
DT_MAX = 5e-3
FRICTION_POINTS = 5  # weight-distribution samples per link
# Stick regularization threshold.  Explicit integration of the viscous branch
# is only stable for eps_stick > mu*g*dt/2; 1e-2 leaves a ~2x margin at mu=1.
EPS_STICK = 1e-2  # m/s
SETTLE_TOL = 1e-3  # m/s, infinity norm on qdot
SETTLE_QUIET_STEPS = 50
SETTLE_MAX_STEPS = 20000
COND_LIMIT = 1e12


def unit_link_matrices(model: ChainModel, q: np.ndarray) -> np.ndarray:
    """Per-link, per-unit-mass contributions to the mass matrix, (n, N, N).

    Link k contributes ``J_vk^T J_vk + J_wk^T I_k J_wk``; with planar motion
    only the zz inertia survives the angular term.
    """
    J, _, _, _, _ = kin.com_jacobians(model, q)
    sel = kin.angular_selector(model)
    izz = model.planar_unit_inertias
    A = np.einsum("kai,kaj->kij", J, J)
    A += izz[:, None, None] * np.einsum("ki,kj->kij", sel, sel)
    return A


def mass_matrix(model: ChainModel, q: np.ndarray) -> np.ndarray:
    """Generalized mass matrix ``M(q) = sum_k m_k A_k``; symmetric PSD."""
    return np.einsum("k,kij->ij", model.masses, unit_link_matrices(model, q))


def coriolis_vector(model: ChainModel, q: np.ndarray, qdot: np.ndarray) -> np.ndarray:
    """Coriolis/centrifugal generalized force via Christoffel symbols of dM/dq."""
    return christoffel_matrix(model, q, qdot) @ qdot


def christoffel_matrix(model: ChainModel, q: np.ndarray, qdot: np.ndarray) -> np.ndarray:
    """Coriolis matrix C with ``C[i,j] = sum_k c_ijk qdot_k`` (Christoffel form)."""
    dM = kin.mass_matrix_partials(model, q)
    t1 = np.einsum("kij,k->ij", dM, qdot)
    t2 = np.einsum("jik,k->ij", dM, qdot)
    t3 = np.einsum("ijk,k->ij", dM, qdot)
    return 0.5 * (t1 + t2 - t3)


def _newton_coriolis(masses: np.ndarray, J: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Equivalent Coriolis vector ``sum_k m_k J_k^T (Jdot_k qdot)``.

    Identical to the Christoffel construction for position Jacobians; used in
    the step loop because it reuses already-computed frames.
    """
    return np.einsum("k,kai,ka->i", masses, J, bias)


def friction_generalized_force(
    model: ChainModel, q: np.ndarray, qdot: np.ndarray
) -> np.ndarray:
    """Generalized force of surface friction sampled at 5 points per link.

    Each sample point carries m_k/5 of the link weight and feels
    ``-mu (m_k/5) g vhat`` while sliding, blending to a viscous drag below
    EPS_STICK so the force vanishes continuously at rest.
    """
    vel, omega, J, coms, anchors, phi, axes = kin.com_velocities(model, q, qdot)
    return _friction_terms(model, vel, omega, J, coms, axes)


def _friction_terms(model: ChainModel, vel, omega, J, coms, axes) -> np.ndarray:
    sel = kin.angular_selector(model)
    Qf = np.zeros(model.ndof)
    for k in range(model.n):
        pts = kin.sample_points(model, k, coms, axes, FRICTION_POINTS)
        rel = pts - coms[k]
        vpts = vel[k][None, :] + omega[k] * kin.perp(rel)
        speeds = np.linalg.norm(vpts, axis=1)
        denom = np.maximum(speeds, EPS_STICK)
        scale = model.mu * (model.masses[k] / FRICTION_POINTS) * model.gravity
        forces = -scale * vpts / denom[:, None]
        f_tot = forces.sum(axis=0)
        torque = np.sum(rel[:, 0] * forces[:, 1] - rel[:, 1] * forces[:, 0])
        Qf += J[k].T @ f_tot + torque * sel[k]
    return Qf


def _inverse_with_cond_check(M: np.ndarray) -> np.ndarray:
    """Inverse of M, raising SingularMassMatrix when cond_1 exceeds the limit."""
    try:
        Minv = np.linalg.inv(M)
    except np.linalg.LinAlgError as exc:
        raise SingularMassMatrix("mass matrix is exactly singular") from exc
    cond = np.abs(M).sum(axis=0).max() * np.abs(Minv).sum(axis=0).max()
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularMassMatrix(f"mass matrix condition number {cond:.3e}")
    return Minv


def _segment_closest_points(p0, d0, q0, d1):
    """Closest points between segments p0+s*d0 and q0+t*d1, s,t in [0,1]."""
    r = p0 - q0
    a = d0 @ d0
    e = d1 @ d1
    f = d1 @ r
    c = d0 @ r
    b = d0 @ d1
    denom = a * e - b * b
    if denom > 1e-14:
        s = np.clip((b * f - c * e) / denom, 0.0, 1.0)
    else:
        s = 0.0  # near-parallel: pick one end and clamp the other
    t = (b * s + f) / e if e > 1e-14 else 0.0
    if t < 0.0:
        t = 0.0
        s = np.clip(-c / a, 0.0, 1.0) if a > 1e-14 else 0.0
    elif t > 1.0:
        t = 1.0
        s = np.clip((b - c) / a, 0.0, 1.0) if a > 1e-14 else 0.0
    return p0 + s * d0, q0 + t * d1


def _collision_contacts(model: ChainModel, coms, anchors, axes):
    """Capsule contacts between non-adjacent links (only pair (0, 2) for n=3).

    Returns a list of (link_a, point_a, link_b, point_b, normal, depth).
    """
    contacts = []
    if model.n < 3:
        return contacts
    a, b = 0, 2
    pa0 = coms[a] - 0.5 * model.lengths[a] * axes[a]
    pb0 = coms[b] - 0.5 * model.lengths[b] * axes[b]
    ca, cb = _segment_closest_points(
        pa0, model.lengths[a] * axes[a], pb0, model.lengths[b] * axes[b]
    )
    min_dist = 0.5 * (model.widths[a] + model.widths[b])
    diff = cb - ca
    dist = float(np.linalg.norm(diff))
    if dist < min_dist:
        if dist > 1e-9:
            normal = diff / dist
        else:
            normal = kin.perp(axes[a])  # degenerate overlap: any transverse dir
        contacts.append((a, ca, b, cb, normal, min_dist - dist))
    return contacts


def resolve_joint_limits(model: ChainModel, state: ChainState) -> ChainState:
    """Clamp joints to their limits and resolve violations inelastically.

    Outward joint velocities at a limit are zeroed through the mass matrix;
    for 3-link chains, interpenetrating non-adjacent capsules additionally
    receive an inelastic normal impulse.  Never increases kinetic energy.
    """
    q = state.q.copy()
    qdot = state.qdot.copy()
    rows = []
    for j in range(model.n - 1):
        lo, hi = model.joint_limits[j]
        idx = 3 + j
        if q[idx] < lo:
            q[idx] = lo
            if qdot[idx] < 0.0:
                row = np.zeros(model.ndof)
                row[idx] = 1.0
                rows.append(row)
        elif q[idx] > hi:
            q[idx] = hi
            if qdot[idx] > 0.0:
                row = np.zeros(model.ndof)
                row[idx] = 1.0
                rows.append(row)
    coms, anchors, phi, axes = kin.chain_frames(model, q)
    for (la, pa, lb, pb, normal, depth) in _collision_contacts(model, coms, anchors, axes):
        Ja = kin.point_jacobian(model, la, pa, anchors)
        Jb = kin.point_jacobian(model, lb, pb, anchors)
        row = normal @ (Jb - Ja)
        if row @ qdot < 0.0:  # approaching
            rows.append(row)
    if rows:
        E = np.stack(rows)
        M = mass_matrix(model, q)
        Minv = _inverse_with_cond_check(M)
        G = E @ Minv @ E.T
        G[np.diag_indices_from(G)] += 1e-12  # guard vs dependent rows
        lam = np.linalg.solve(G, -(E @ qdot))
        qdot = qdot + Minv @ (E.T @ lam)
    return ChainState(q, qdot)


def step(
    model: ChainModel,
    state: ChainState,
    external_force: np.ndarray | None = None,
    dt: float = DT,
) -> ChainState:
    """One semi-implicit Euler step under friction plus an external force."""
    if not 0.0 < dt <= DT_MAX:
        raise ValueError(f"dt must lie in (0, {DT_MAX}], got {dt}")
    if not (np.all(np.isfinite(state.q)) and np.all(np.isfinite(state.qdot))):
        raise ValueError("state must be finite")
    q, qdot = state.q, state.qdot
    bias, vel, omega, J, coms, anchors, phi, axes = kin.com_bias_accelerations(
        model, q, qdot
    )
    M = mass_matrix(model, q)
    Minv = _inverse_with_cond_check(M)
    C = _newton_coriolis(model.masses, J, bias)
    Qf = _friction_terms(model, vel, omega, J, coms, axes)
    rhs = Qf - C
    if external_force is not None:
        rhs = rhs + external_force
    qddot = Minv @ rhs
    new_qdot = qdot + dt * qddot
    new_q = q + dt * new_qdot
    return resolve_joint_limits(model, ChainState(new_q, new_qdot))


def settle(model: ChainModel, state: ChainState) -> tuple[ChainState, int]:
    """Step with no external force until the chain is at rest.

    Equilibrium is declared after SETTLE_QUIET_STEPS consecutive checks with
    ``||qdot||_inf < SETTLE_TOL``; residual creep is then zeroed exactly.
    Raises SettleTimeout after SETTLE_MAX_STEPS.
    """
    current = state.copy()
    steps = 0
    quiet = 0
    while True:
        if np.max(np.abs(current.qdot)) < SETTLE_TOL:
            quiet += 1
            if quiet >= SETTLE_QUIET_STEPS:
                current.qdot[:] = 0.0
                return current, steps
        else:
            quiet = 0
        if steps >= SETTLE_MAX_STEPS:
            raise SettleTimeout(f"no equilibrium after {SETTLE_MAX_STEPS} steps")
        current = step(model, current)
        steps += 1


def kinetic_energy(model: ChainModel, state: ChainState) -> float:
    """Total in-plane kinetic energy of the chain."""
    vel, omega, _, _, _, _, _ = kin.com_velocities(model, state.q, state.qdot)
    izz = model.planar_unit_inertias
    lin = np.sum(model.masses * np.sum(vel**2, axis=1))
    rot = np.sum(model.masses * izz * omega**2)
    return 0.5 * float(lin + rot)


def forward_acceleration(
    model: ChainModel,
    q: np.ndarray,
    qdot: np.ndarray,
    external_force: np.ndarray | None = None,
    include_friction: bool = True,
) -> np.ndarray:
    """Instantaneous qddot for the given state and external generalized force."""
    M = mass_matrix(model, q)
    Minv = _inverse_with_cond_check(M)
    rhs = -coriolis_vector(model, q, qdot)
    if include_friction:
        rhs = rhs + friction_generalized_force(model, q, qdot)
    if external_force is not None:
        rhs = rhs + external_force
    return Minv @ rhs


def contact_point(model: ChainModel, q: np.ndarray, link: int, local_offset: float,
                  side: int) -> np.ndarray:
    """World position of a push contact point on a link's long face."""
    coms, anchors, phi, axes = kin.chain_frames(model, q)
    lateral = side * 0.5 * model.widths[link] * kin.perp(axes[link])
    return coms[link] + local_offset * axes[link] + lateral


def push_window(
    model: ChainModel,
    state: ChainState,
    link: int,
    local_offset: float,
    side: int,
    direction: np.ndarray,
    speed: float,
    control_steps: int = 10,
    substeps_per_control: int = 10,
    dt: float = DT,
) -> ChainState:
    """Drive the contact point with a kinematic pusher for a fixed window.

    The pusher is a plane with outward normal ``direction`` that starts
    tangent to the contact point and advances at ``speed``.  While touching,
    an impulse enforces the contact-point normal velocity to match the
    pusher; the contact is one-sided (impulse never pulls).
    """
    q = state.q.copy()
    qdot = state.qdot.copy()
    direction = np.asarray(direction, dtype=float)
    p_start = contact_point(model, q, link, local_offset, side)
    plane_travel = 0.0
    lateral_body = side * 0.5 * model.widths[link]
    for istep in range(control_steps * substeps_per_control):
        bias, vel, omega, J, coms, anchors, phi, axes = kin.com_bias_accelerations(
            model, q, qdot
        )
        M = mass_matrix(model, q)
        Minv = _inverse_with_cond_check(M)
        C = _newton_coriolis(model.masses, J, bias)
        Qf = _friction_terms(model, vel, omega, J, coms, axes)
        free_qdot = qdot + dt * (Minv @ (Qf - C))
        p_c = (
            coms[link]
            + local_offset * axes[link]
            + lateral_body * kin.perp(axes[link])
        )
        gap = (p_c - (p_start + plane_travel * direction)) @ direction
        if gap <= 1e-9:
            Jp = kin.point_jacobian(model, link, p_c, anchors)
            jn = direction @ Jp
            v_n = jn @ free_qdot
            if v_n < speed:
                w = jn @ (Minv @ jn)
                lam = (speed - v_n) / w
                assert lam >= 0.0, "one-sided contact produced a pulling impulse"
                free_qdot = free_qdot + (Minv @ jn) * lam
        qdot = free_qdot
        q = q + dt * qdot
        resolved = resolve_joint_limits(model, ChainState(q, qdot))
        q, qdot = resolved.q, resolved.qdot
        plane_travel += speed * dt
    return ChainState(q, qdot)
