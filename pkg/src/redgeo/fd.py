"""Finite-difference helpers on uniform grids.

Second-order central stencils inside, second-order one-sided stencils at the
edges, plus step-halving (Richardson) error estimates used to set tolerances
for one-sided inequality checks.
"""

from __future__ import annotations

import numpy as np


def _swap(values: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.asarray(values, dtype=float), axis, 0)


def d1(values: np.ndarray, h: float, axis: int = 0) -> np.ndarray:
    """First derivative along `axis`; needs >= 3 nodes."""
    u = _swap(values, axis)
    if u.shape[0] < 3:
        raise ValueError("need at least 3 nodes for second-order differences")
    out = np.empty_like(u)
    out[1:-1] = (u[2:] - u[:-2]) / (2.0 * h)
    out[0] = (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h)
    out[-1] = (3.0 * u[-1] - 4.0 * u[-2] + u[-3]) / (2.0 * h)
    return np.moveaxis(out, 0, axis)


def d2(values: np.ndarray, h: float, axis: int = 0) -> np.ndarray:
    """Second derivative along `axis`; needs >= 4 nodes."""
    u = _swap(values, axis)
    if u.shape[0] < 4:
        raise ValueError("need at least 4 nodes for one-sided second derivatives")
    out = np.empty_like(u)
    out[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / h ** 2
    out[0] = (2.0 * u[0] - 5.0 * u[1] + 4.0 * u[2] - u[3]) / h ** 2
    out[-1] = (2.0 * u[-1] - 5.0 * u[-2] + 4.0 * u[-3] - u[-4]) / h ** 2
    return np.moveaxis(out, 0, axis)


def _fill_edges(est: np.ndarray, width: int) -> np.ndarray:
    # Edge stencils are one-sided; inflate the nearest interior estimate.
    if est.shape[0] > 2 * width:
        for k in range(width):
            est[k] = 4.0 * est[width]
            est[-1 - k] = 4.0 * est[-1 - width]
    else:
        est[:] = 4.0 * np.max(est)
    return est


def d1_error(values: np.ndarray, h: float, axis: int = 0) -> np.ndarray:
    """Step-halving estimate of the d1 truncation error, per node."""
    u = _swap(values, axis)
    est = np.zeros_like(u)
    if u.shape[0] >= 5:
        fine = (u[3:-1] - u[1:-3]) / (2.0 * h)
        coarse = (u[4:] - u[:-4]) / (4.0 * h)
        est[2:-2] = np.abs(fine - coarse) / 3.0
    est = _fill_edges(est, 2)
    return np.moveaxis(est, 0, axis)


def d2_error(values: np.ndarray, h: float, axis: int = 0) -> np.ndarray:
    """Step-halving estimate of the d2 truncation error, per node."""
    u = _swap(values, axis)
    est = np.zeros_like(u)
    if u.shape[0] >= 5:
        fine = (u[3:-1] - 2.0 * u[2:-2] + u[1:-3]) / h ** 2
        coarse = (u[4:] - 2.0 * u[2:-2] + u[:-4]) / (2.0 * h) ** 2
        est[2:-2] = np.abs(fine - coarse) / 3.0
    est = _fill_edges(est, 2)
    return np.moveaxis(est, 0, axis)
