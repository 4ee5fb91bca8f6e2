"""Physical description and state of a planar articulated chain.

A chain is ``n`` rectangular links connected by revolute joints, lying flat on
a horizontal surface with kinetic friction.  Generalized coordinates are
``q = (x, y, alpha, theta_1..theta_{n-1})``: root-link COM translation, root
yaw, and the joint angles, so ``N = n + 2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_WIDTH = 0.04
DEFAULT_JOINT_LIMIT = 2.6  # rad; wide enough for self-collision to matter
HARDWARE_JOINT_LIMIT = np.pi / 2  # hardware-mimicking configuration


def rect_unit_inertia(length: float, width: float) -> np.ndarray:
    """Inertia per unit mass of a thin rectangular plate about its COM."""
    ixx = width**2 / 12.0
    iyy = length**2 / 12.0
    izz = (length**2 + width**2) / 12.0
    return np.diag([ixx, iyy, izz])


@dataclass(frozen=True)
class ChainModel:
    """Immutable physical parameters of an n-link chain.

    ``unit_inertias`` are 3x3 inertia matrices per unit mass about each link
    COM; only the zz component matters for in-plane motion, but the full
    matrix is kept so spatial formulas apply verbatim.
    """

    n: int
    lengths: np.ndarray
    masses: np.ndarray
    mu: float
    widths: np.ndarray = None
    unit_inertias: np.ndarray = None
    gravity: float = 9.81
    joint_limits: np.ndarray = None

    def __post_init__(self):
        if self.n not in (1, 2, 3):
            raise ValueError(f"link count must be 1, 2 or 3, got {self.n}")
        object.__setattr__(self, "lengths", np.asarray(self.lengths, dtype=float))
        object.__setattr__(self, "masses", np.asarray(self.masses, dtype=float))
        if self.widths is None:
            object.__setattr__(self, "widths", np.full(self.n, DEFAULT_WIDTH))
        else:
            object.__setattr__(self, "widths", np.asarray(self.widths, dtype=float))
        if self.unit_inertias is None:
            inertias = np.stack(
                [rect_unit_inertia(l, w) for l, w in zip(self.lengths, self.widths)]
            )
            object.__setattr__(self, "unit_inertias", inertias)
        else:
            object.__setattr__(
                self, "unit_inertias", np.asarray(self.unit_inertias, dtype=float)
            )
        if self.joint_limits is None:
            limits = np.tile([-DEFAULT_JOINT_LIMIT, DEFAULT_JOINT_LIMIT], (self.n - 1, 1))
            object.__setattr__(self, "joint_limits", limits.reshape(self.n - 1, 2))
        else:
            object.__setattr__(
                self,
                "joint_limits",
                np.asarray(self.joint_limits, dtype=float).reshape(self.n - 1, 2),
            )
        self._validate()

    def _validate(self):
        if self.lengths.shape != (self.n,) or self.masses.shape != (self.n,):
            raise ValueError("lengths/masses must have one entry per link")
        if not np.all(self.masses > 0):
            raise ValueError("all masses must be positive")
        if not np.all(self.lengths > 0):
            raise ValueError("all lengths must be positive")
        if not self.mu > 0:
            raise ValueError("friction coefficient must be positive")
        if self.unit_inertias.shape != (self.n, 3, 3):
            raise ValueError("unit_inertias must be (n, 3, 3)")
        for k in range(self.n):
            ine = self.unit_inertias[k]
            if not np.allclose(ine, ine.T, atol=1e-12):
                raise ValueError(f"unit inertia of link {k} is not symmetric")
            if np.min(np.linalg.eigvalsh(ine)) <= 0:
                raise ValueError(f"unit inertia of link {k} is not positive-definite")
        if np.any(self.joint_limits[:, 0] >= self.joint_limits[:, 1]):
            raise ValueError("joint limits must satisfy lo < hi")

    @property
    def ndof(self) -> int:
        """Dimension of the generalized coordinate vector (n + 2)."""
        return self.n + 2

    @property
    def mass_fractions(self) -> np.ndarray:
        """Per-link masses normalized by the total mass (simplex vector)."""
        return self.masses / self.masses.sum()

    @property
    def planar_unit_inertias(self) -> np.ndarray:
        """zz components of the per-unit-mass inertias (what matters in-plane)."""
        return self.unit_inertias[:, 2, 2].copy()

    def scaled_masses(self, factor: float) -> "ChainModel":
        """Copy of the model with every link mass multiplied by ``factor``."""
        return ChainModel(
            n=self.n,
            lengths=self.lengths.copy(),
            masses=self.masses * factor,
            mu=self.mu,
            widths=self.widths.copy(),
            unit_inertias=self.unit_inertias.copy(),
            gravity=self.gravity,
            joint_limits=self.joint_limits.copy(),
        )


@dataclass
class ChainState:
    """Generalized position and velocity of a chain."""

    q: np.ndarray
    qdot: np.ndarray = None

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).copy()
        if self.qdot is None:
            self.qdot = np.zeros_like(self.q)
        else:
            self.qdot = np.asarray(self.qdot, dtype=float).copy()
        if self.q.shape != self.qdot.shape:
            raise ValueError("q and qdot must have the same shape")

    def copy(self) -> "ChainState":
        return ChainState(self.q.copy(), self.qdot.copy())

    @property
    def at_rest(self) -> bool:
        return bool(np.all(self.qdot == 0.0))


def sample_chain(
    rng: np.random.Generator,
    n: int,
    mass_range: tuple[float, float],
    mu_range: tuple[float, float] = (0.5, 1.0),
    length_range: tuple[float, float] = (0.1, 0.15),
    joint_limit: float = DEFAULT_JOINT_LIMIT,
    width: float = DEFAULT_WIDTH,
) -> ChainModel:
    """Draw a random chain model with each parameter uniform in its range."""
    lengths = rng.uniform(length_range[0], length_range[1], size=n)
    masses = rng.uniform(mass_range[0], mass_range[1], size=n)
    mu = float(rng.uniform(mu_range[0], mu_range[1]))
    limits = np.tile([-joint_limit, joint_limit], (n - 1, 1)).reshape(n - 1, 2)
    return ChainModel(
        n=n,
        lengths=lengths,
        masses=masses,
        mu=mu,
        widths=np.full(n, width),
        joint_limits=limits,
    )
