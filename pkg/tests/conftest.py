"""Shared test helpers: finite-difference gradient checking.

The FD reference always runs in float64 (layer code preserves dtype, so
casting the parameters is enough).  When the implementation under test is
the float32 build, its analytic gradients carry ~1e-6 absolute rounding
noise; the relative-error floor keeps the comparison meaningful for small
entries without masking real gradient bugs, which show up as O(1) factors.
"""

from __future__ import annotations

from typing import Callable

import numpy as np


def fd_gradient(loss_fn: Callable[[], float], arr: np.ndarray, h: float) -> np.ndarray:
    """Central finite differences of loss_fn w.r.t. every entry of arr.

    ``arr`` is perturbed in place and restored; it may be a view (used to
    skip the frozen pad row of embeddings).
    """
    grad = np.zeros(arr.shape, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + h
        lp = loss_fn()
        flat[j] = orig - h
        lm = loss_fn()
        flat[j] = orig
        gflat[j] = (lp - lm) / (2 * h)
    return grad


def max_rel_error(analytic: np.ndarray, reference: np.ndarray, floor: float) -> float:
    num = np.abs(np.asarray(analytic, dtype=np.float64) - reference)
    den = np.maximum(np.maximum(np.abs(analytic), np.abs(reference)), floor)
    return float((num / den).max()) if num.size else 0.0


# (h, tolerance, denominator floor) per precision of the build under test.
FD32 = (1e-3, 1e-3, 1e-2)
FD64 = (1e-5, 1e-6, 1e-4)
