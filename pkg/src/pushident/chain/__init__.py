"""Planar articulated-chain simulation on a frictional surface."""

from .backend import backend_name, push_window, settle, step
from .dynamics import (
    coriolis_vector,
    forward_acceleration,
    friction_generalized_force,
    kinetic_energy,
    mass_matrix,
    resolve_joint_limits,
    unit_link_matrices,
)
from .model import ChainModel, ChainState, sample_chain

__all__ = [
    "ChainModel",
    "ChainState",
    "backend_name",
    "coriolis_vector",
    "forward_acceleration",
    "friction_generalized_force",
    "kinetic_energy",
    "mass_matrix",
    "push_window",
    "resolve_joint_limits",
    "sample_chain",
    "settle",
    "step",
    "unit_link_matrices",
]
