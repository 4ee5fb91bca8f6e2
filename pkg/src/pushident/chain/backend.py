"""Backend selection for the hot simulation kernels.

The compiled extension (`_speedups`, built from Cython) implements the inner
loops of `step`, `settle` and `push_window`.  It is selected automatically at
import when present; set ``PUSHIDENT_PURE_PYTHON=1`` to force the numpy
reference implementation.  Both backends implement the same formulas and are
cross-checked in the test suite.
"""

from __future__ import annotations

import os

import numpy as np

from ..errors import SettleTimeout, SingularMassMatrix
from . import dynamics as ref
from .model import ChainModel, ChainState

_FORCED_PURE = os.environ.get("PUSHIDENT_PURE_PYTHON", "") not in ("", "0")

if not _FORCED_PURE:
    try:
        from . import _speedups
    except ImportError:
        _speedups = None
else:
    _speedups = None


def backend_name() -> str:
    return "compiled" if _speedups is not None else "pure-python"


def _pack_params(model: ChainModel) -> np.ndarray:
    """Flatten model parameters for the compiled kernels.

    Layout: [n, mu, g, then per link: length, width, mass, izz,
    then per joint: lo, hi].
    """
    n = model.n
    out = np.empty(3 + 4 * n + 2 * (n - 1))
    out[0] = float(n)
    out[1] = model.mu
    out[2] = model.gravity
    izz = model.planar_unit_inertias
    for k in range(n):
        out[3 + 4 * k : 3 + 4 * k + 4] = (
            model.lengths[k],
            model.widths[k],
            model.masses[k],
            izz[k],
        )
    base = 3 + 4 * n
    for j in range(n - 1):
        out[base + 2 * j : base + 2 * j + 2] = model.joint_limits[j]
    return out


_STATUS_OK = 0
_STATUS_SINGULAR = 1
_STATUS_TIMEOUT = 2
_STATUS_CONTACT = 3


def _raise_for_status(status: int):
    if status == _STATUS_SINGULAR:
        raise SingularMassMatrix("mass matrix condition number exceeds limit")
    if status == _STATUS_TIMEOUT:
        raise SettleTimeout(f"no equilibrium after {ref.SETTLE_MAX_STEPS} steps")
    if status == _STATUS_CONTACT:
        raise AssertionError("one-sided contact produced a pulling impulse")
    if status != _STATUS_OK:
        raise RuntimeError(f"unknown backend status {status}")


def step(model: ChainModel, state: ChainState, external_force=None,
         dt: float = ref.DT) -> ChainState:
    """One dynamics step; see :func:`pushident.chain.dynamics.step`."""
    if _speedups is None:
        return ref.step(model, state, external_force, dt)
    if not 0.0 < dt <= ref.DT_MAX:
        raise ValueError(f"dt must lie in (0, {ref.DT_MAX}], got {dt}")
    if not (np.all(np.isfinite(state.q)) and np.all(np.isfinite(state.qdot))):
        raise ValueError("state must be finite")
    q = state.q.copy()
    qdot = state.qdot.copy()
    ext = np.zeros_like(q) if external_force is None else np.asarray(
        external_force, dtype=float
    )
    status = _speedups.step_n(
        _pack_params(model), q, qdot, ext, dt, 1, ref.EPS_STICK, ref.COND_LIMIT
    )
    _raise_for_status(status)
    return ChainState(q, qdot)


def settle(model: ChainModel, state: ChainState) -> tuple[ChainState, int]:
    """Settle to equilibrium; see :func:`pushident.chain.dynamics.settle`."""
    if _speedups is None:
        return ref.settle(model, state)
    q = state.q.copy()
    qdot = state.qdot.copy()
    steps = _speedups.settle_loop(
        _pack_params(model), q, qdot, ref.DT, ref.SETTLE_TOL,
        ref.SETTLE_QUIET_STEPS, ref.SETTLE_MAX_STEPS, ref.EPS_STICK,
        ref.COND_LIMIT,
    )
    if steps < 0:
        _raise_for_status(-steps)
    return ChainState(q, qdot), int(steps)


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
    dt: float = ref.DT,
) -> ChainState:
    """Velocity-imposed push window; see :func:`pushident.chain.dynamics.push_window`."""
    if _speedups is None:
        return ref.push_window(
            model, state, link, local_offset, side, direction, speed,
            control_steps, substeps_per_control, dt,
        )
    q = state.q.copy()
    qdot = state.qdot.copy()
    direction = np.asarray(direction, dtype=float)
    status = _speedups.push_window_loop(
        _pack_params(model), q, qdot, int(link), float(local_offset), int(side),
        direction, float(speed), int(control_steps * substeps_per_control), dt,
        ref.EPS_STICK, ref.COND_LIMIT,
    )
    _raise_for_status(status)
    return ChainState(q, qdot)
