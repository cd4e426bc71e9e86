"""Pinhole projection and the per-pixel epipolar warp field.

A warp field holds, for every reference pixel, the (x, y) coordinates in
the live image where the corresponding scene point projects under a rigid
motion hypothesis, along with a validity mask. Points at or behind the
camera plane (Z <= Z_MIN) and projections landing outside the live image
are masked invalid instead of clamped, so they contribute neither evidence
nor gradients.

Coordinates are x = column, y = row, in pixel units; grid[y, x] indexes
the corresponding sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from . import se3
from .se3 import SE3Transform, Twist

Z_MIN = 1e-3


class InvalidDepthError(ValueError):
    pass


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole parameters in pixels. Rescale proportionally on resize."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("intrinsics must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")

    def scaled(self, sx: float, sy: float) -> "Intrinsics":
        return Intrinsics(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy)

    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])


@dataclass
class WarpField:
    """Per-pixel live-image sampling coordinates plus validity.

    coords is (H, W, 2) with (x, y) order. Where mask is False the
    coordinates carry no guarantee. The two jacobian fields are optional
    caches filled by warp_field_jacobians: d_coords_d_depth is (H, W, 2)
    and d_coords_d_twist is (H, W, 2, 6) ordered [u, v].
    """

    coords: np.ndarray
    mask: np.ndarray
    d_coords_d_depth: Optional[np.ndarray] = None
    d_coords_d_twist: Optional[np.ndarray] = None

    @property
    def height(self) -> int:
        return self.coords.shape[0]

    @property
    def width(self) -> int:
        return self.coords.shape[1]


def backproject(p, depth: float, k: Intrinsics) -> np.ndarray:
    """Camera-frame 3-D point for pixel p=(x, y) at the given depth."""
    if depth <= 0:
        raise InvalidDepthError("depth must be positive, got %r" % (depth,))
    x, y = float(p[0]), float(p[1])
    return np.array([(x - k.cx) * depth / k.fx, (y - k.cy) * depth / k.fy, depth])


def project(point, k: Intrinsics) -> Tuple[np.ndarray, bool]:
    """Pixel coordinates of a camera-frame point and a validity flag.

    Invalidity (Z <= Z_MIN) is a flag, not an error; invalid coordinates
    are returned as zeros.
    """
    point = np.asarray(point, dtype=np.float64).reshape(3)
    z = point[2]
    if z <= Z_MIN:
        return np.zeros(2), False
    return np.array([k.fx * point[0] / z + k.cx, k.fy * point[1] / z + k.cy]), True


def _pixel_rays(height: int, width: int, k: Intrinsics) -> np.ndarray:
    """(H, W, 3) array of K^-1 [x, y, 1] for every pixel center."""
    xs = np.arange(width, dtype=np.float64)
    ys = np.arange(height, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys)
    rays = np.empty((height, width, 3))
    rays[:, :, 0] = (gx - k.cx) / k.fx
    rays[:, :, 1] = (gy - k.cy) / k.fy
    rays[:, :, 2] = 1.0
    return rays


def _project_grid(points: np.ndarray, k: Intrinsics, height: int, width: int):
    """Project an (H, W, 3) point grid; returns coords and validity mask."""
    z = points[:, :, 2]
    front = z > Z_MIN
    zsafe = np.where(front, z, 1.0)
    coords = np.empty(points.shape[:2] + (2,))
    coords[:, :, 0] = k.fx * points[:, :, 0] / zsafe + k.cx
    coords[:, :, 1] = k.fy * points[:, :, 1] / zsafe + k.cy
    # Coordinates that are integers in exact arithmetic (e.g. the unchanged
    # y under a pure-x stereo translation) pick up rounding noise that would
    # make the bounds test below non-deterministic; snap them.
    nearest = np.round(coords)
    snap = np.abs(coords - nearest) < 1e-9
    coords[snap] = nearest[snap]
    in_bounds = (
        (coords[:, :, 0] >= 0.0)
        & (coords[:, :, 0] <= width - 1.0)
        & (coords[:, :, 1] >= 0.0)
        & (coords[:, :, 1] <= height - 1.0)
    )
    mask = front & in_bounds
    coords[~front] = 0.0
    return coords, mask


def epipolar_warp_field(depth: np.ndarray, t: SE3Transform, k: Intrinsics) -> WarpField:
    """Map every reference pixel into the live image via backproject,
    rigid transform, project. Live image is assumed to share the reference
    resolution.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ValueError("depth must be a single-channel (H, W) grid")
    h, w = depth.shape
    rays = _pixel_rays(h, w, k)
    pts = rays * depth[:, :, None]
    moved = se3.transform_points(t, pts)
    coords, mask = _project_grid(moved, k, h, w)
    return WarpField(coords=coords, mask=mask)


def _projection_jacobian(moved: np.ndarray, k: Intrinsics) -> np.ndarray:
    """(H, W, 2, 3) derivative of projected pixel coords w.r.t. the
    transformed 3-D point; rows are (x, y), columns (X, Y, Z)."""
    z = moved[:, :, 2]
    zsafe = np.where(z > Z_MIN, z, 1.0)
    inv_z = 1.0 / zsafe
    a = np.zeros(moved.shape[:2] + (2, 3))
    a[:, :, 0, 0] = k.fx * inv_z
    a[:, :, 0, 2] = -k.fx * moved[:, :, 0] * inv_z * inv_z
    a[:, :, 1, 1] = k.fy * inv_z
    a[:, :, 1, 2] = -k.fy * moved[:, :, 1] * inv_z * inv_z
    return a


def warp_field_with_depth_jacobian(
    depth: np.ndarray, t: SE3Transform, k: Intrinsics
) -> WarpField:
    """Warp field plus d(coords)/d(depth) for a fixed transform (the stereo
    pair, where pose receives no gradient)."""
    depth = np.asarray(depth, dtype=np.float64)
    h, w = depth.shape
    rays = _pixel_rays(h, w, k)
    pts = rays * depth[:, :, None]
    moved = se3.transform_points(t, pts)
    coords, mask = _project_grid(moved, k, h, w)
    a = _projection_jacobian(moved, k)
    rq = rays @ t.rotation.T  # d(moved)/d(depth)
    d_depth = np.einsum("hwij,hwj->hwi", a, rq)
    d_depth[~mask] = 0.0
    return WarpField(coords=coords, mask=mask, d_coords_d_depth=d_depth)


def warp_field_jacobians(depth: np.ndarray, t: Twist, k: Intrinsics) -> WarpField:
    """Warp field with analytic partials of the projected coordinates with
    respect to the per-pixel depth and the six twist parameters.

    Chain: coords = project(R(u) @ (ray * depth) + v), so
      d(coords)/d(depth) = A @ (R ray)
      d(coords)/d(u)     = A @ (-R [point]x J_r(u))
      d(coords)/d(v)     = A
    with A the projection jacobian at the transformed point.
    """
    depth = np.asarray(depth, dtype=np.float64)
    h, w = depth.shape
    transform = se3.twist_to_transform(t)
    rays = _pixel_rays(h, w, k)
    pts = rays * depth[:, :, None]
    moved = se3.transform_points(transform, pts)
    coords, mask = _project_grid(moved, k, h, w)
    a = _projection_jacobian(moved, k)

    r = transform.rotation
    rq = rays @ r.T
    d_depth = np.einsum("hwij,hwj->hwi", a, rq)

    jr = se3.so3_right_jacobian(t.u)
    # -R [p]x J_r expanded per pixel: columns of [p]x are cross(e_i, .)
    px = np.zeros(pts.shape[:2] + (3, 3))
    px[:, :, 0, 1] = -pts[:, :, 2]
    px[:, :, 0, 2] = pts[:, :, 1]
    px[:, :, 1, 0] = pts[:, :, 2]
    px[:, :, 1, 2] = -pts[:, :, 0]
    px[:, :, 2, 0] = -pts[:, :, 1]
    px[:, :, 2, 1] = pts[:, :, 0]
    d_moved_du = -np.einsum("ab,hwbc,cd->hwad", r, px, jr)

    d_twist = np.zeros((h, w, 2, 6))
    d_twist[:, :, :, :3] = np.einsum("hwij,hwjk->hwik", a, d_moved_du)
    d_twist[:, :, :, 3:] = a

    d_depth[~mask] = 0.0
    d_twist[~mask] = 0.0
    return WarpField(
        coords=coords, mask=mask, d_coords_d_depth=d_depth, d_coords_d_twist=d_twist
    )
