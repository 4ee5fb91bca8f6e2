"""Self-contained invariant suites behind the ``verify`` CLI command.

Each check returns (name, passed, detail); suites aggregate them so the CLI
can print one line per check and exit nonzero on any failure.
"""

from __future__ import annotations

import numpy as np

from .chain import (
    ChainModel,
    ChainState,
    coriolis_vector,
    friction_generalized_force,
    kinetic_energy,
    mass_matrix,
    sample_chain,
    settle,
    step,
    unit_link_matrices,
)
from .chain.dynamics import forward_acceleration
from .errors import SettleTimeout, ZeroAcceleration
from .estimator import MassPredictor, _batch_loss_and_grad
from .explorer import (
    PPOConfig,
    PushPolicy,
    _minibatch_backward,
    compute_gae,
    minibatch_loss,
)
from .identifiability import analyze, excitation_score
from .nn import LSTM, Dense, ParameterStore, gradient_check


def _check(name: str, passed: bool, detail: str) -> dict:
    return {"name": name, "passed": bool(passed), "detail": detail}


def _mutated_step(model, state, friction_sign: float):
    """Step with optionally sign-flipped friction (mutation probe hook)."""
    if friction_sign == 1.0:
        return step(model, state)
    extra = (friction_sign - 1.0) * friction_generalized_force(
        model, state.q, state.qdot
    )
    return step(model, state, external_force=extra)


def run_physics_suite(seed: int = 0, friction_sign: float = 1.0) -> list[dict]:
    rng = np.random.default_rng(seed)
    checks = []

    # stopping-distance oracle
    m = ChainModel(n=1, lengths=[0.125], masses=[0.5], mu=0.5)
    st = ChainState([0.0, 0.0, 0.0], [0.5, 0.0, 0.0])
    try:
        steps = 0
        while np.max(np.abs(st.qdot)) > 0 and steps < 2000:
            st = _mutated_step(m, st, friction_sign)
            steps += 1
            if np.max(np.abs(st.qdot)) < 1e-3:
                break
        final, _ = settle(m, st) if friction_sign == 1.0 else (st, 0)
        dist = abs(final.q[0])
        ref = 0.5**2 / (2 * 0.5 * 9.81)
        rel = abs(dist - ref) / ref
        checks.append(
            _check("stopping-distance", rel < 0.01, f"rel err {rel:.3%} (limit 1%)")
        )
    except SettleTimeout:
        checks.append(_check("stopping-distance", False, "settle timed out"))

    # mass matrix symmetry/PSD and A_k reconstruction
    worst_sym = worst_eig = worst_recon = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 4))
        model = sample_chain(rng, n, (0.1, 10.0))
        q = rng.normal(size=model.ndof)
        M = mass_matrix(model, q)
        worst_sym = max(worst_sym, float(np.max(np.abs(M - M.T))))
        worst_eig = min(worst_eig, float(np.min(np.linalg.eigvalsh(M))))
        A = unit_link_matrices(model, q)
        recon = np.einsum("k,kij->ij", model.masses, A)
        worst_recon = max(worst_recon, float(np.max(np.abs(M - recon))))
    checks.append(
        _check("mass-matrix-symmetry", worst_sym < 1e-12, f"max asym {worst_sym:.2e}")
    )
    checks.append(
        _check("mass-matrix-psd", worst_eig >= -1e-10, f"min eig {worst_eig:.2e}")
    )
    checks.append(
        _check("mass-matrix-reconstruction", worst_recon < 1e-12,
               f"max err {worst_recon:.2e}")
    )

    # passivity
    worst = 0.0
    for _ in range(200):
        model = sample_chain(rng, 2, (0.1, 1.0))
        q, qd = rng.normal(size=4), rng.normal(size=4)
        eps = 1e-6
        mdot = (mass_matrix(model, q + eps * qd) - mass_matrix(model, q - eps * qd)) / (
            2 * eps
        )
        worst = max(worst, abs(qd @ mdot @ qd - 2 * qd @ coriolis_vector(model, q, qd)))
    checks.append(_check("passivity", worst < 1e-8, f"max residual {worst:.2e}"))

    # mass-scaling invariance
    model = sample_chain(rng, 2, (0.1, 1.0))
    big = model.scaled_masses(10.0)
    s1 = ChainState([0, 0, 0.4, -0.7], [0.3, -0.2, 1.5, 2.0])
    s2 = s1.copy()
    worst = 0.0
    for _ in range(500):
        s1 = _mutated_step(model, s1, friction_sign)
        s2 = _mutated_step(big, s2, friction_sign)
        worst = max(worst, float(np.max(np.abs(s1.q - s2.q))))
    checks.append(
        _check("mass-scaling-invariance", worst < 1e-8, f"max divergence {worst:.2e}")
    )

    # energy monotonicity on a contact-free settle trace
    model = sample_chain(rng, 2, (0.1, 1.0))
    st = ChainState([0, 0, 0.2, 0.1], [0.4, -0.3, 1.0, -1.0])
    prev = kinetic_energy(model, st)
    ok = True
    worst_gain = 0.0
    for _ in range(400):
        st = _mutated_step(model, st, friction_sign)
        e = kinetic_energy(model, st)
        gain = e - prev * (1 + 1e-10)
        if gain > 1e-18:
            ok = False
            worst_gain = max(worst_gain, gain)
        prev = e
    checks.append(
        _check("energy-monotonicity", ok, f"worst gain {worst_gain:.2e}")
    )

    # settle idempotence
    if friction_sign == 1.0:
        model = sample_chain(rng, 2, (0.1, 1.0))
        st = ChainState([0, 0, 0.3, -0.4], [0.5, 0.3, -2.0, 3.0])
        first, _ = settle(model, st)
        second, _ = settle(model, first)
        drift = float(np.max(np.abs(second.q - first.q)))
        checks.append(_check("settle-idempotence", drift < 1e-6, f"drift {drift:.2e}"))
    return checks


def run_gradients_suite(seed: int = 0) -> list[dict]:
    rng = np.random.default_rng(seed)
    checks = []

    store = ParameterStore()
    dense = Dense(store, "d", 5, 4, rng, relu=True)
    x = rng.normal(size=(3, 5))
    target = rng.normal(size=(3, 4))

    def dense_loss():
        out, cache = dense.forward(x)
        diff = out - target
        dense.backward(2 * diff, cache)
        return float(np.sum(diff**2))

    err = gradient_check(dense_loss, store)
    checks.append(_check("dense-gradients", err < 1e-4, f"max rel err {err:.2e}"))

    store = ParameterStore()
    cell = LSTM(store, "l", 4, 5, rng)
    xs = rng.normal(size=(4, 2, 4))
    targets = rng.normal(size=(4, 2, 5))

    def lstm_loss():
        h, c = cell.initial_state(2)
        caches, grads = [], []
        total = 0.0
        for t in range(4):
            h, c, cache = cell.step(xs[t], h, c)
            caches.append(cache)
            diff = h - targets[t]
            grads.append(2 * diff)
            total += float(np.sum(diff**2))
        dh = np.zeros_like(h)
        dc = np.zeros_like(c)
        for t in reversed(range(4)):
            dh = dh + grads[t]
            _, dh, dc = cell.backward_step(dh, dc, caches[t])
        return total

    err = gradient_check(lstm_loss, store)
    checks.append(_check("lstm-bptt-gradients", err < 1e-4, f"max rel err {err:.2e}"))

    # full predictor at desk widths
    from .chain import ChainModel
    from .interaction import UniformRandomSource, rollout_episode

    eps = []
    for s in range(2):
        r = np.random.default_rng(s)
        model = ChainModel(n=2, lengths=[0.12, 0.11], masses=r.uniform(0.1, 1, 2), mu=0.7)
        eps.append(rollout_episode(model, UniformRandomSource(), 2, 0.01, r, seed=s))
    net = MassPredictor(2, rng)

    def pred_loss():
        return _batch_loss_and_grad(net, eps)

    from .estimator import batch_loss

    err = gradient_check(pred_loss, net.store, value_fn=lambda: batch_loss(net, eps))
    checks.append(
        _check("predictor-stack-gradients", err < 1e-4, f"max rel err {err:.2e}")
    )

    # full policy stack at desk widths on a synthetic buffer
    from .explorer import RolloutBuffer

    policy = PushPolicy(2, rng)
    E = 2
    W = 1
    dones = np.zeros((W, E))
    dones[:, -1] = 1.0
    buf = RolloutBuffer(
        obs=rng.normal(size=(W, E, policy.obs_dim)),
        pre_tanh=rng.normal(size=(W, E, 2)),
        log_probs=rng.normal(size=(W, E)) * 0.1,
        values=rng.normal(size=(W, E)),
        rewards=rng.normal(size=(W, E)),
        dones=dones,
        h_snap=np.zeros((W, E, policy.core.hidden)),
        c_snap=np.zeros((W, E, policy.core.hidden)),
        l1_errors=np.abs(rng.normal(size=(W, E))),
        episode_len=E,
    )
    adv, ret = compute_gae(buf)
    cfg = PPOConfig()

    def policy_loss():
        stats = _minibatch_backward(policy, buf, adv, ret, [(0, 0)], cfg)
        return (
            stats["policy_loss"]
            + cfg.value_coef * stats["value_loss"]
            - cfg.entropy_coef * policy.entropy()
        )

    err = gradient_check(
        policy_loss, policy.store,
        value_fn=lambda: minibatch_loss(policy, buf, adv, ret, [(0, 0)], cfg),
    )
    checks.append(
        _check("policy-stack-gradients", err < 1e-4, f"max rel err {err:.2e}")
    )
    return checks


def run_identifiability_suite(seed: int = 0) -> list[dict]:
    rng = np.random.default_rng(seed)
    checks = []
    worst_nullity = 10
    worst_recon = 0.0
    for _ in range(100):
        m = sample_chain(rng, 2, (0.1, 1.0))
        q = rng.normal(size=4)
        res = analyze(m, q)
        worst_nullity = min(worst_nullity, min(res.nullity(k) for k in range(2)))
        recon = np.einsum("k,kij->ij", m.masses, res.matrices)
        worst_recon = max(worst_recon, float(np.max(np.abs(recon - mass_matrix(m, q)))))
    checks.append(
        _check("two-link-nullity", worst_nullity >= 1, f"min nullity {worst_nullity}")
    )
    checks.append(
        _check("identifiability-reconstruction", worst_recon < 1e-12,
               f"max err {worst_recon:.2e}")
    )

    worst = 0.0
    for _ in range(20):
        m = sample_chain(rng, 2, (0.1, 1.0))
        q = rng.normal(size=4)
        res = analyze(m, q)
        for k in range(2):
            v = res.null_bases[k][:, 0]
            force = mass_matrix(m, q) @ v
            masses2 = m.masses.copy()
            masses2[k] *= 5.0
            m2 = ChainModel(n=2, lengths=m.lengths, masses=masses2, mu=m.mu,
                            widths=m.widths, unit_inertias=m.unit_inertias,
                            joint_limits=m.joint_limits)
            a1 = forward_acceleration(m, q, np.zeros(4), force)
            a2 = forward_acceleration(m2, q, np.zeros(4), force)
            worst = max(worst, float(np.max(np.abs(a1 - a2))))
    checks.append(
        _check("null-response-mass-independence", worst < 1e-8, f"max diff {worst:.2e}")
    )

    try:
        m = sample_chain(rng, 2, (0.1, 1.0))
        excitation_score(m, rng.normal(size=4), np.zeros(4))
        checks.append(_check("zero-acceleration-raises", False, "no error raised"))
    except ZeroAcceleration:
        checks.append(_check("zero-acceleration-raises", True, "raises as specified"))
    return checks


SUITES = {
    "physics": run_physics_suite,
    "gradients": run_gradients_suite,
    "identifiability": run_identifiability_suite,
}


def run_suites(names, seed: int = 0) -> list[dict]:
    out = []
    for name in names:
        for check in SUITES[name](seed=seed):
            check["suite"] = name
            out.append(check)
    return out
