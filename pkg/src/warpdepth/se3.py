"""Rigid-body pose algebra: axis-angle twists and 4x4-equivalent transforms.

A pose is parameterized by six numbers: u (axis-angle rotation, radians
times unit axis, restricted to the principal domain |u| < pi) and v
(translation in meters). The rotation map is Rodrigues(u) and the
translation is used directly; the fully coupled exponential with the
V-matrix is deliberately not implemented, since the pose head regresses
u and v as independent quantities.

Direction convention: a transform stored as ref->live maps points expressed
in reference-camera coordinates into live-camera coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_ORTHO_TOL = 1e-9
_SMALL_ANGLE = 1e-8


def skew(w: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(w) @ p == cross(w, p)."""
    wx, wy, wz = w
    return np.array([[0.0, -wz, wy], [wz, 0.0, -wx], [-wy, wx, 0.0]])


@dataclass(frozen=True)
class Twist:
    """Six-parameter pose: axis-angle rotation u and translation v."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64).reshape(3)
        v = np.asarray(self.v, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("twist entries must be finite")
        if np.linalg.norm(u) >= np.pi:
            raise ValueError("rotation magnitude %.6f is outside the principal domain |u| < pi"
                             % np.linalg.norm(u))
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @classmethod
    def zero(cls) -> "Twist":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, w) -> "Twist":
        w = np.asarray(w, dtype=np.float64).reshape(6)
        return cls(w[:3], w[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.u, self.v])


@dataclass(frozen=True)
class SE3Transform:
    """Rigid transform with an orthonormal rotation and a translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError("transform entries must be finite")
        err = np.max(np.abs(r.T @ r - np.eye(3)))
        if err > _ORTHO_TOL or abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise ValueError("rotation is not special orthogonal (max |R^T R - I| = %.3e)" % err)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "SE3Transform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "SE3Transform":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def rodrigues(u: np.ndarray) -> np.ndarray:
    """Rotation matrix for an axis-angle vector.

    Below |u| = 1e-8 a second-order Taylor expansion replaces the closed
    form to avoid 0/0 at the identity, where optimization starts.
    """
    u = np.asarray(u, dtype=np.float64).reshape(3)
    theta = np.linalg.norm(u)
    k = skew(u)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + k + 0.5 * (k @ k)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * k + b * (k @ k)


def twist_to_transform(t: Twist) -> SE3Transform:
    """Rotation = Rodrigues(u), translation = v."""
    if np.linalg.norm(t.u) >= np.pi:
        raise ValueError("twist rotation outside |u| < pi")
    return SE3Transform(rodrigues(t.u), np.array(t.v))


def transform_to_twist(t: SE3Transform) -> Twist:
    """Principal-domain inverse of twist_to_transform.

    Valid for rotation angles strictly below pi; raises near the boundary
    where the axis becomes ill-conditioned.
    """
    r = t.rotation
    cos_theta = np.clip((np.trace(r) - 1.0) * 0.5, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    if theta > np.pi - 1e-6:
        raise ValueError("rotation angle too close to pi for a principal twist")
    w = 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if theta < _SMALL_ANGLE:
        u = w * (1.0 + theta * theta / 6.0)
    else:
        u = w * (theta / np.sin(theta))
    return Twist(u, np.array(t.translation))


def compose(a: SE3Transform, b: SE3Transform) -> SE3Transform:
    """Transform applying b first, then a."""
    r = a.rotation @ b.rotation
    # Accumulated float drift is re-projected so long chains stay valid.
    if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-12:
        uu, _, vv = np.linalg.svd(r)
        r = uu @ vv
        if np.linalg.det(r) < 0:
            r = uu @ np.diag([1.0, 1.0, -1.0]) @ vv
    return SE3Transform(r, a.rotation @ b.translation + a.translation)


def invert(t: SE3Transform) -> SE3Transform:
    return SE3Transform(t.rotation.T, -t.rotation.T @ t.translation)


def transform_point(t: SE3Transform, p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(p)):
        raise ValueError("point must be finite")
    return t.rotation @ p + t.translation


def transform_points(t: SE3Transform, pts: np.ndarray) -> np.ndarray:
    """Apply the transform to an (..., 3) array of points."""
    return pts @ t.rotation.T + t.translation


def so3_right_jacobian(u: np.ndarray) -> np.ndarray:
    """Right Jacobian J_r of SO(3): exp((u + d)^) ~ exp(u^) exp((J_r d)^)."""
    u = np.asarray(u, dtype=np.float64).reshape(3)
    theta = np.linalg.norm(u)
    k = skew(u)
    if theta < 1e-4:
        t2 = theta * theta
        c1 = 0.5 - t2 / 24.0 + t2 * t2 / 720.0
        c2 = 1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0
    else:
        c1 = (1.0 - np.cos(theta)) / (theta * theta)
        c2 = (theta - np.sin(theta)) / (theta ** 3)
    return np.eye(3) - c1 * k + c2 * (k @ k)


def twist_jacobians(t: Twist, p) -> np.ndarray:
    """3x6 derivative of Rodrigues(u) @ p + v with respect to [u, v].

    The rotation block is -R [p]x J_r(u), which reduces to -[p]x at the
    identity; the translation block is I.
    """
    p = np.asarray(p, dtype=np.float64).reshape(3)
    r = rodrigues(t.u)
    jac = np.zeros((3, 6))
    jac[:, :3] = -r @ skew(p) @ so3_right_jacobian(t.u)
    jac[:, 3:] = np.eye(3)
    return jac
