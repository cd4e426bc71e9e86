"""Dense 2-D grid conventions and the stencil operations the loss stack builds on.

A grid is a float64 ndarray, either (H, W) for single-channel data (depth,
inverse depth, masks use bool (H, W)) or (H, W, C) with channels interleaved
last. Images are normalized to [0, 1] on load; feature maps and depth maps
are unbounded floats. All public operations are pure and work in double
precision; gradient checks at 1e-4 relative tolerance are not feasible in
float32.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import DegenerateInputError


def as_grid(data, name: str = "grid") -> np.ndarray:
    """Validate and return a float64 grid of shape (H, W) or (H, W, C)."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim not in (2, 3):
        raise ValueError("%s must be (H, W) or (H, W, C), got shape %s" % (name, arr.shape))
    if not np.all(np.isfinite(arr)):
        raise ValueError("%s contains non-finite values" % name)
    return arr


def channel_count(grid: np.ndarray) -> int:
    return 1 if grid.ndim == 2 else grid.shape[2]


def with_channel_axis(grid: np.ndarray) -> np.ndarray:
    """View of the grid with an explicit channel axis (H, W, C)."""
    return grid[:, :, None] if grid.ndim == 2 else grid


def gradient_x(grid: np.ndarray) -> np.ndarray:
    """Forward difference along columns: g[m, n] = grid[m, n+1] - grid[m, n].

    Output has width W-1; no boundary values are invented.
    """
    if grid.shape[1] < 2:
        raise DegenerateInputError("gradient_x needs width >= 2, got %d" % grid.shape[1])
    return grid[:, 1:] - grid[:, :-1]


def gradient_y(grid: np.ndarray) -> np.ndarray:
    """Forward difference along rows: g[m, n] = grid[m+1, n] - grid[m, n]."""
    if grid.shape[0] < 2:
        raise DegenerateInputError("gradient_y needs height >= 2, got %d" % grid.shape[0])
    return grid[1:, :] - grid[:-1, :]


def channel_mean_abs(grid: np.ndarray) -> np.ndarray:
    """Per-pixel mean of absolute values across channels, as an (H, W) grid."""
    g = with_channel_axis(grid)
    if g.shape[2] < 1:
        raise DegenerateInputError("grid has no channels")
    return np.mean(np.abs(g), axis=2)


def finite_difference_probe(
    f: Callable[[np.ndarray], float], grid: np.ndarray, epsilon: float
) -> np.ndarray:
    """Central-difference estimate of df/dgrid, one scalar per grid element.

    The probe is the reference oracle for every hand-derived gradient in the
    package; f must be pure. Note bilinear warps are only piecewise smooth:
    probes whose warp coordinates sit within ~epsilon of an integer pixel
    boundary straddle a subgradient switch and should be skipped by callers.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    base = np.array(grid, dtype=np.float64)
    out = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = out.reshape(-1)
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + epsilon
        f_hi = float(f(base))
        flat[i] = saved - epsilon
        f_lo = float(f(base))
        flat[i] = saved
        if not (np.isfinite(f_hi) and np.isfinite(f_lo)):
            raise ArithmeticError("non-finite function value during probe at index %d" % i)
        gflat[i] = (f_hi - f_lo) / (2.0 * epsilon)
    return out
