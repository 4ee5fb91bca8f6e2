"""Tests for per-link identifiability matrices, null spaces and scores."""

import numpy as np
import pytest

from pushident.chain import ChainModel, ChainState, mass_matrix, sample_chain
from pushident.chain.dynamics import forward_acceleration
from pushident.errors import ZeroAcceleration
from pushident.identifiability import (
    analyze,
    excitation_score,
    identifiability_table,
    link_identifiability_matrix,
    matrix_rank,
    nullspace,
    push_acceleration,
)
from pushident.interaction import PushCommand


def straight_two_link(masses=(0.5, 0.5)):
    return ChainModel(n=2, lengths=[0.125, 0.125], masses=list(masses), mu=0.7)


class TestLinkMatrices:
    def test_single_body_full_rank(self, rng):
        m = ChainModel(n=1, lengths=[0.12], masses=[0.4], mu=0.6)
        A = link_identifiability_matrix(m, rng.normal(size=3), 0)
        assert matrix_rank(A) == 3

    def test_two_link_nullity_at_least_one(self, rng):
        for _ in range(50):
            m = sample_chain(rng, 2, (0.1, 1.0))
            res = analyze(m, rng.normal(size=4))
            for k in range(2):
                assert res.nullity(k) >= 1
                assert res.ranks[k] + res.nullity(k) == 4

    def test_reconstruction_is_exact(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 4))
            m = sample_chain(rng, n, (0.1, 10.0))
            q = rng.normal(size=m.ndof)
            A = [link_identifiability_matrix(m, q, k) for k in range(n)]
            recon = sum(m.masses[k] * A[k] for k in range(n))
            assert np.max(np.abs(recon - mass_matrix(m, q))) < 1e-12

    def test_basis_orthonormal(self, rng):
        m = sample_chain(rng, 2, (0.1, 1.0))
        res = analyze(m, rng.normal(size=4))
        for k in range(2):
            B = res.null_bases[k]
            assert np.allclose(B.T @ B, np.eye(B.shape[1]), atol=1e-12)


class TestNullspace:
    def test_identity_has_empty_nullspace(self):
        assert nullspace(np.eye(4)).shape == (4, 0)

    def test_diag_one_zero(self):
        basis = nullspace(np.diag([1.0, 0.0]))
        assert basis.shape == (2, 1)
        assert np.allclose(np.abs(basis[:, 0]), [0.0, 1.0])

    def test_recovers_constructed_kernel(self, rng):
        for _ in range(20):
            N, nullity = 5, 2
            q_mat, _ = np.linalg.qr(rng.normal(size=(N, N)))
            vals = np.concatenate([rng.uniform(0.5, 2.0, N - nullity), np.zeros(nullity)])
            A = (q_mat * vals) @ q_mat.T
            basis = nullspace(A)
            assert basis.shape == (N, nullity)
            true_kernel = q_mat[:, N - nullity :]
            # principal angles via singular values of the basis product
            s = np.linalg.svd(true_kernel.T @ basis, compute_uv=False)
            assert np.max(np.abs(s - 1.0)) < 1e-8


class TestExcitationScore:
    def test_top_singular_vector_scores_one(self, rng):
        m = sample_chain(rng, 2, (0.1, 1.0))
        q = rng.normal(size=4)
        A = link_identifiability_matrix(m, q, 1)
        _, _, vt = np.linalg.svd(A)
        scores = excitation_score(m, q, vt[0])
        assert scores[1] == pytest.approx(1.0, abs=1e-10)

    def test_null_direction_scores_zero(self, rng):
        m = sample_chain(rng, 2, (0.1, 1.0))
        q = rng.normal(size=4)
        res = analyze(m, q)
        v = res.null_bases[0][:, 0]
        assert excitation_score(m, q, v)[0] < 1e-8

    def test_scale_invariance(self, rng):
        m = sample_chain(rng, 2, (0.1, 1.0))
        q = rng.normal(size=4)
        v = rng.normal(size=4)
        s1 = excitation_score(m, q, v)
        s2 = excitation_score(m, q, 173.0 * v)
        assert np.allclose(s1, s2, atol=1e-12)

    def test_zero_acceleration_raises(self, rng):
        m = sample_chain(rng, 2, (0.1, 1.0))
        with pytest.raises(ZeroAcceleration):
            excitation_score(m, rng.normal(size=4), np.zeros(4))


class TestNullspaceResponseIndependence:
    def test_null_direction_response_independent_of_mass(self, rng):
        # drive the chain from rest along a null direction of A_k: the
        # instantaneous response must not depend on m_k
        for _ in range(20):
            m = sample_chain(rng, 2, (0.1, 1.0))
            q = rng.normal(size=4)
            res = analyze(m, q)
            for k in range(2):
                v = res.null_bases[k][:, 0]
                force = mass_matrix(m, q) @ v
                masses2 = m.masses.copy()
                masses2[k] *= 7.0
                m2 = ChainModel(n=2, lengths=m.lengths, masses=masses2, mu=m.mu,
                                widths=m.widths, unit_inertias=m.unit_inertias,
                                joint_limits=m.joint_limits)
                a1 = forward_acceleration(m, q, np.zeros(4), force)
                a2 = forward_acceleration(m2, q, np.zeros(4), force)
                assert np.max(np.abs(a1 - v)) < 1e-8
                assert np.max(np.abs(a1 - a2)) < 1e-8


class TestStraightChainPushes:
    """Numerical truth for pushes on a straightened chain.

    An axial push line produces pure translation: the joint stays silent and
    the per-link responses are exactly colinear, so no single observation can
    separate the masses (even though the raw excitation scores stay large).
    A transverse push at the distal tip bends the joint strongly and makes
    the per-link responses linearly independent.
    """

    def setup_method(self):
        self.model = straight_two_link()
        self.q = np.zeros(4)

    def axial_qddot(self):
        plus = push_acceleration(
            self.model, self.q, PushCommand(0, -0.05, 1, 0.5, np.array([1.0, 0.0]))
        )
        minus = push_acceleration(
            self.model, self.q, PushCommand(0, -0.05, -1, 0.5, np.array([1.0, 0.0]))
        )
        return 0.5 * (plus + minus)  # force line through the COM axis

    def test_axial_push_is_pure_translation(self):
        qdd = self.axial_qddot()
        assert abs(qdd[3]) < 1e-12 * np.linalg.norm(qdd)  # joint silent
        scores = excitation_score(self.model, self.q, qdd)
        assert scores[1] > 0.9  # large despite zero distribution information

    def test_axial_responses_are_colinear(self):
        qdd = self.axial_qddot()
        res = analyze(self.model, self.q)
        r0 = res.matrices[0] @ qdd
        r1 = res.matrices[1] @ qdd
        cos = r0 @ r1 / (np.linalg.norm(r0) * np.linalg.norm(r1))
        assert cos == pytest.approx(1.0, abs=1e-12)

    def test_transverse_tip_push_bends_the_joint(self):
        tip = PushCommand(1, 0.9 * 0.0625, 1, 0.5, np.array([0.0, -1.0]))
        qdd = push_acceleration(self.model, self.q, tip)
        assert abs(qdd[3]) > 0.5 * np.linalg.norm(qdd)  # joint dominates
        res = analyze(self.model, self.q)
        r0 = res.matrices[0] @ qdd
        r1 = res.matrices[1] @ qdd
        cos = abs(r0 @ r1 / (np.linalg.norm(r0) * np.linalg.norm(r1)))
        assert cos < 1.0 - 1e-3  # independent component exists


def test_identifiability_table_rows(rng):
    m = straight_two_link()
    rows = identifiability_table(
        m, [np.zeros(4), rng.normal(size=4)], [(-0.5, 0.3), (0.5, -0.7)]
    )
    assert len(rows) == 2 * 2 * 2
    for row in rows:
        assert 0.0 <= row["score"] <= 1.0 + 1e-12
        assert row["rank"] + row["nullity"] == 4
