"""Central-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .params import ParameterStore


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Worst per-coordinate relative error; tiny pairs compare absolutely."""
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def gradient_check(loss_fn, store: ParameterStore, eps: float = 1e-5,
                   value_fn=None) -> float:
    """Compare analytic gradients of ``loss_fn`` against central differences.

    ``loss_fn()`` must deterministically compute the scalar loss and leave its
    gradients in the store.  ``value_fn`` may supply a cheaper forward-only
    evaluation of the same loss for the numeric side.  Returns the worst
    relative error over every parameter coordinate.
    """
    if value_fn is None:
        def value_fn():
            store.zero_grads()
            return loss_fn()

    store.zero_grads()
    loss_fn()
    analytic = {k: v.copy() for k, v in store.grads.items()}
    worst = 0.0
    for name, block in store.blocks.items():
        numeric = np.zeros_like(block)
        flat = block.reshape(-1)
        num_flat = numeric.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            hi = value_fn()
            flat[idx] = orig - eps
            lo = value_fn()
            flat[idx] = orig
            num_flat[idx] = (hi - lo) / (2.0 * eps)
        worst = max(worst, relative_error(analytic[name], numeric))
    store.zero_grads()
    loss_fn()  # leave the store in a consistent state
    return worst
