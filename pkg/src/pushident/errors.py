"""Exception types shared across the package."""


class PushIdentError(Exception):
    """Base class for all package-specific errors."""


class SingularMassMatrix(PushIdentError):
    """Mass matrix is numerically singular (degenerate model input)."""


class SettleTimeout(PushIdentError):
    """Simulation failed to reach equilibrium within the step cap."""


class EpisodeFailure(PushIdentError):
    """An episode rollout failed; the caller should discard and resample."""


class ShapeMismatch(PushIdentError):
    """Array shapes disagree with a layer or network contract."""


class NonFiniteGradient(PushIdentError):
    """A gradient contains NaN/Inf; the optimizer update was aborted."""


class KinematicSingularity(PushIdentError):
    """Task-space inertia is not invertible at this arm pose."""


class ZeroAcceleration(PushIdentError):
    """Excitation score is undefined for a zero generalized acceleration."""


class CollectionStalled(PushIdentError):
    """Episode failure rate is too high; sampling ranges are misconfigured."""


class ConfigMismatch(PushIdentError):
    """Artifacts produced under incompatible configurations."""
