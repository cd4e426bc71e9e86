"""Differentiable bilinear sampling and the full view-synthesis function.

Sampling is valid only where all four interpolation neighbors are in
bounds; everything else is masked out rather than clamped or zero-padded,
since padding would fabricate photometric evidence. Occlusions are not
modeled: several reference pixels may legitimately sample the same live
region.
"""

from __future__ import annotations

from typing import Tuple

import numpy as np

from . import camera
from .camera import Intrinsics, WarpField
from .se3 import SE3Transform


def _sample_setup(live: np.ndarray, field: WarpField):
    if field.coords.ndim != 3 or field.coords.shape[2] != 2:
        raise ValueError("warp field coords must be (H, W, 2), got %s"
                         % (field.coords.shape,))
    if field.mask.shape != field.coords.shape[:2]:
        raise ValueError("warp field mask/coords dimensions disagree")
    h, w = live.shape[:2]
    xs = field.coords[:, :, 0]
    ys = field.coords[:, :, 1]
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    mask = field.mask & (x0 >= 0) & (x0 <= w - 2) & (y0 >= 0) & (y0 <= h - 2)
    x0c = np.clip(x0, 0, w - 2)
    y0c = np.clip(y0, 0, h - 2)
    wx = np.where(mask, xs - x0c, 0.0)
    wy = np.where(mask, ys - y0c, 0.0)
    return x0c, y0c, wx, wy, mask


def _sample_corners_fused(live: np.ndarray, field: WarpField):
    """Shared gather for value and gradient: returns (value, d/dx, d/dy,
    mask), each (H, W, C). The single gather of the four interpolation
    corners is the hot path of the whole loss stack."""
    x0, y0, wx, wy, mask = _sample_setup(live, field)
    h, w = live.shape[:2]
    src = live[:, :, None] if live.ndim == 2 else live
    c = src.shape[2]
    flat = np.ascontiguousarray(src).reshape(h * w, c)
    idx = (y0 * w + x0).ravel()
    shape = y0.shape + (c,)
    i00 = flat.take(idx, axis=0).reshape(shape)
    i01 = flat.take(idx + 1, axis=0).reshape(shape)
    i10 = flat.take(idx + w, axis=0).reshape(shape)
    i11 = flat.take(idx + w + 1, axis=0).reshape(shape)
    wxe = wx[:, :, None]
    wye = wy[:, :, None]
    top = i00 + wxe * (i01 - i00)
    bot = i10 + wxe * (i11 - i10)
    value = top + wye * (bot - top)
    gx = (i01 - i00) + wye * ((i11 - i10) - (i01 - i00))
    gy = (i10 - i00) + wxe * ((i11 - i01) - (i10 - i00))
    value[~mask] = 0.0
    gx[~mask] = 0.0
    gy[~mask] = 0.0
    return value, gx, gy, mask


def bilinear_sample(live: np.ndarray, field: WarpField) -> Tuple[np.ndarray, np.ndarray]:
    """Sample the live grid at the field coordinates.

    Returns the synthesized grid (zeros where invalid) and the combined
    validity mask: field.mask AND all four neighbors in bounds. Values at
    integer coordinates reproduce the source pixel exactly.
    """
    value, _, _, mask = _sample_corners_fused(live, field)
    return (value[:, :, 0] if live.ndim == 2 else value), mask


def bilinear_sample_gradient(live: np.ndarray, field: WarpField) -> Tuple[np.ndarray, np.ndarray]:
    """Analytic d(sampled value)/d(x, y) per output pixel and channel.

    Returns (H, W, C, 2) (or (H, W, 2) for single-channel live) with the
    last axis ordered (d/dx, d/dy), plus the validity mask. At exact
    integer coordinates this is the right/lower cell's slope; bilinear
    interpolation has no two-sided derivative at nodes, so gradient checks
    must avoid probing there.
    """
    _, gx, gy, mask = _sample_corners_fused(live, field)
    grad = np.stack([gx, gy], axis=-1)
    return (grad[:, :, 0, :] if live.ndim == 2 else grad), mask


def synthesize_view(
    live: np.ndarray, depth: np.ndarray, t: SE3Transform, k: Intrinsics
) -> Tuple[np.ndarray, np.ndarray]:
    """Reconstruct the reference view by warping the live view.

    depth is the reference-view depth in meters, (H, W). Works for any
    channel count, so the same function synthesizes color images and
    dense feature maps.
    """
    field = camera.epipolar_warp_field(depth, t, k)
    return bilinear_sample(live, field)
