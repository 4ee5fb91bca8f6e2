"""Operation-level tests of the chain simulator against independent oracles."""

import numpy as np
import pytest

from pushident.chain import (
    ChainModel,
    ChainState,
    coriolis_vector,
    friction_generalized_force,
    kinetic_energy,
    mass_matrix,
    resolve_joint_limits,
    sample_chain,
    settle,
    step,
)
from pushident.chain import dynamics as dyn
from pushident.errors import SettleTimeout, SingularMassMatrix

import oracles


def single_link(mass=0.5, length=0.125, mu=0.5):
    return ChainModel(n=1, lengths=[length], masses=[mass], mu=mu)


class TestMassMatrix:
    def test_single_link_is_diagonal(self):
        m = single_link(mass=0.7)
        q = np.array([0.3, -1.2, 0.9])
        M = mass_matrix(m, q)
        izz = m.planar_unit_inertias[0]
        assert np.allclose(M, np.diag([0.7, 0.7, 0.7 * izz]), atol=1e-15)

    def test_two_link_matches_closed_form(self, rng):
        for _ in range(50):
            m = sample_chain(rng, 2, (0.1, 1.0))
            q = rng.normal(size=4)
            M = mass_matrix(m, q)
            M_ref = oracles.two_link_mass_matrix(m, q)
            assert np.max(np.abs(M - M_ref)) < 1e-9

    def test_linear_in_masses(self, rng):
        m = sample_chain(rng, 3, (0.1, 1.0))
        q = rng.normal(size=5)
        c = 3.7
        assert np.allclose(mass_matrix(m.scaled_masses(c), q), c * mass_matrix(m, q),
                           rtol=1e-13)


class TestCoriolis:
    def test_zero_velocity_gives_zero(self, rng):
        m = sample_chain(rng, 2, (0.1, 1.0))
        q = rng.normal(size=4)
        assert np.all(coriolis_vector(m, q, np.zeros(4)) == 0.0)

    def test_passivity_against_fd_mdot(self, rng):
        worst = 0.0
        for _ in range(100):
            m = sample_chain(rng, int(rng.integers(2, 4)), (0.1, 1.0))
            N = m.ndof
            q = rng.normal(size=N)
            qd = rng.normal(size=N)
            mdot = oracles.mass_matrix_time_derivative(lambda x: mass_matrix(m, x), q, qd)
            val = qd @ mdot @ qd - 2.0 * (qd @ coriolis_vector(m, q, qd))
            worst = max(worst, abs(val))
        assert worst < 1e-8

    def test_linear_in_masses(self, rng):
        m = sample_chain(rng, 2, (0.1, 1.0))
        q, qd = rng.normal(size=4), rng.normal(size=4)
        assert np.allclose(coriolis_vector(m.scaled_masses(5.0), q, qd),
                           5.0 * coriolis_vector(m, q, qd), rtol=1e-12)


class TestFriction:
    def test_zero_at_rest(self, rng):
        m = sample_chain(rng, 2, (0.1, 1.0))
        q = rng.normal(size=4)
        assert np.all(friction_generalized_force(m, q, np.zeros(4)) == 0.0)

    def test_translating_link_feels_full_weight_no_torque(self):
        m = single_link(mass=0.8, mu=0.6)
        q = np.array([0.0, 0.0, 0.4])
        qd = np.array([0.9, 0.0, 0.0])  # well above the stick threshold
        Q = friction_generalized_force(m, q, qd)
        assert np.isclose(Q[0], -0.6 * 0.8 * 9.81, rtol=1e-12)
        assert abs(Q[1]) < 1e-15
        assert abs(Q[2]) < 1e-15

    def test_spinning_link_torque_matches_point_sum(self):
        m = single_link(mass=0.8, mu=0.6, length=0.14)
        omega = 2.5
        q = np.array([0.0, 0.0, 0.3])
        qd = np.array([0.0, 0.0, omega])
        Q = friction_generalized_force(m, q, qd)
        expected = oracles.spinning_link_friction_torque(m, omega, dyn.EPS_STICK)
        assert expected < 0.0  # opposes the spin
        assert np.isclose(Q[2], expected, rtol=1e-12)
        assert np.allclose(Q[:2], 0.0, atol=1e-16)


class TestStep:
    def test_equilibrium_is_fixed_point(self, rng):
        m = sample_chain(rng, 2, (0.1, 1.0))
        st = ChainState(rng.normal(size=4) * 0.3, np.zeros(4))
        out = step(m, st)
        assert np.array_equal(out.q, st.q)
        assert np.array_equal(out.qdot, st.qdot)

    def test_stopping_distance(self):
        m = single_link(mass=0.5, mu=0.5)
        st = ChainState([0.0, 0.0, 0.0], [0.5, 0.0, 0.0])
        out, _ = settle(m, st)
        dist = abs(out.q[0])
        ref = oracles.stopping_distance(0.5, 0.5)
        assert ref == pytest.approx(0.02548, abs=5e-6)
        assert abs(dist - ref) / ref < 0.01

    def test_mass_scaling_leaves_trajectory_unchanged(self, rng):
        m = sample_chain(rng, 2, (0.1, 1.0))
        big = m.scaled_masses(10.0)
        s1 = ChainState([0, 0, 0.4, -0.7], [0.3, -0.2, 1.5, 2.0])
        s2 = s1.copy()
        for _ in range(1000):
            s1 = step(m, s1)
            s2 = step(big, s2)
            assert np.max(np.abs(s1.q - s2.q)) < 1e-8
            assert np.max(np.abs(s1.qdot - s2.qdot)) < 1e-8

    def test_dt_bounds(self):
        m = single_link()
        st = ChainState([0, 0, 0])
        with pytest.raises(ValueError):
            step(m, st, dt=0.0)
        with pytest.raises(ValueError):
            step(m, st, dt=6e-3)

    def test_singular_mass_matrix_raises(self):
        inertia = np.diag([1e-14, 1e-14, 1e-14])
        m = ChainModel(n=1, lengths=[0.1], masses=[1.0], mu=0.5,
                       unit_inertias=inertia[None, :, :])
        with pytest.raises(SingularMassMatrix):
            step(m, ChainState([0, 0, 0], [0.1, 0, 0]))


class TestJointLimits:
    def test_interior_state_unchanged(self, rng):
        m = sample_chain(rng, 2, (0.1, 1.0))
        st = ChainState([0, 0, 0.2, 0.5], [0.1, 0.0, -0.3, 0.4])
        out = resolve_joint_limits(m, st)
        assert np.array_equal(out.q, st.q)
        assert np.array_equal(out.qdot, st.qdot)

    def test_outward_velocity_zeroed_at_limit(self, rng):
        m = sample_chain(rng, 2, (0.1, 1.0))
        hi = m.joint_limits[0, 1]
        st = ChainState([0, 0, 0.0, hi + 0.05], [0.0, 0.0, 0.0, 1.2])
        out = resolve_joint_limits(m, st)
        assert out.q[3] == hi
        assert abs(out.qdot[3]) < 1e-12

    def test_inward_velocity_kept(self, rng):
        m = sample_chain(rng, 2, (0.1, 1.0))
        hi = m.joint_limits[0, 1]
        st = ChainState([0, 0, 0.0, hi + 0.05], [0.0, 0.0, 0.0, -1.2])
        out = resolve_joint_limits(m, st)
        assert out.q[3] == hi
        assert out.qdot[3] == -1.2

    def test_impulse_never_increases_energy(self, rng):
        # energy is compared at the clamped configuration: the impulse changes
        # velocities, the clamp only projects positions (and with it the metric)
        for _ in range(50):
            m = sample_chain(rng, int(rng.integers(2, 4)), (0.1, 1.0))
            N = m.ndof
            q = rng.normal(size=N)
            q[3:] = rng.uniform(-3.2, 3.2, size=N - 3)  # may violate limits
            st = ChainState(q, rng.normal(size=N) * 2.0)
            out = resolve_joint_limits(m, st)
            pre = kinetic_energy(m, ChainState(out.q, st.qdot))
            post = kinetic_energy(m, out)
            assert post <= pre * (1 + 1e-12) + 1e-15

    def test_three_link_self_collision_stops_approach(self):
        # fold link 2 back onto link 0 so the capsules interpenetrate
        m = ChainModel(n=3, lengths=[0.12, 0.12, 0.12], masses=[0.5, 0.5, 0.5],
                       mu=0.7)
        q = np.array([0.0, 0.0, 0.0, 2.4, 2.4])
        st = ChainState(q, np.zeros(5))
        from pushident.chain import kinematics as kin
        coms, anchors, phi, axes = kin.chain_frames(m, q)
        contacts = dyn._collision_contacts(m, coms, anchors, axes)
        assert contacts, "fixture should interpenetrate"
        la, pa, lb, pb, normal, depth = contacts[0]
        Ja = kin.point_jacobian(m, la, pa, anchors)
        Jb = kin.point_jacobian(m, lb, pb, anchors)
        row = normal @ (Jb - Ja)
        st.qdot = -row.copy()  # approaching along the contact normal
        assert row @ st.qdot < 0
        out = resolve_joint_limits(m, st)
        assert abs(row @ out.qdot) < 1e-9
        assert kinetic_energy(m, out) <= kinetic_energy(m, st) + 1e-15


class TestSettle:
    def test_at_rest_returns_quickly(self, rng):
        m = sample_chain(rng, 2, (0.1, 1.0))
        st = ChainState([0, 0, 0.3, -0.4], np.zeros(4))
        out, steps = settle(m, st)
        assert steps <= 50
        assert np.array_equal(out.q, st.q)
        assert np.all(out.qdot == 0.0)

    def test_idempotent(self, rng):
        m = sample_chain(rng, 2, (0.1, 1.0))
        st = ChainState([0, 0, 0.3, -0.4], [0.5, 0.3, -2.0, 3.0])
        first, _ = settle(m, st)
        second, _ = settle(m, first)
        assert np.max(np.abs(second.q - first.q)) < 1e-6

    def test_energy_monotone_while_contact_free(self, rng):
        m = sample_chain(rng, 2, (0.1, 1.0))
        st = ChainState([0, 0, 0.2, 0.1], [0.4, -0.3, 1.0, -1.0])
        prev = kinetic_energy(m, st)
        for _ in range(400):
            st = step(m, st)
            lo, hi = m.joint_limits[0]
            assert lo < st.q[3] < hi, "test fixture should stay away from limits"
            e = kinetic_energy(m, st)
            assert e <= prev * (1 + 1e-10) + 1e-18
            prev = e

    def test_timeout_raises(self):
        m = single_link(mu=0.5)
        orig = dyn.SETTLE_MAX_STEPS
        try:
            dyn.SETTLE_MAX_STEPS = 20  # 5 m/s takes ~1000 steps to stop
            with pytest.raises(SettleTimeout):
                dyn.settle(m, ChainState([0, 0, 0], [5.0, 0, 0]))
        finally:
            dyn.SETTLE_MAX_STEPS = orig
