"""Pinhole camera model: intrinsics, world-to-camera poses, projection.

Conventions used throughout the toolkit (OpenCV-style):
  - camera looks along +z, x right, y down; image origin at the top left
  - extrinsics are world->camera: p_cam = R @ p_world + t
  - "depth" always means camera-frame z, not ray length
  - quaternions are stored (w, x, y, z)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BehindCameraError, DomainError, InvalidDepthError

ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 < self.cx < self.width):
            raise DomainError(f"cx={self.cx} outside (0, {self.width})")
        if not (0 < self.cy < self.height):
            raise DomainError(f"cy={self.cy} outside (0, {self.height})")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def fov_x(self) -> float:
        return 2.0 * math.atan(self.width / (2.0 * self.fx))

    @property
    def fov_y(self) -> float:
        return 2.0 * math.atan(self.height / (2.0 * self.fy))


@dataclass(frozen=True)
class CameraPose:
    """World-to-camera rigid transform: p_cam = rotation @ p_world + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.ascontiguousarray(np.asarray(self.rotation, dtype=np.float64).reshape(3, 3))
        t = np.ascontiguousarray(np.asarray(self.translation, dtype=np.float64).reshape(3))
        err = np.linalg.norm(r.T @ r - np.eye(3))
        if err > ORTHONORMAL_TOL:
            raise DomainError(f"rotation not orthonormal (|R^T R - I|_F = {err:.3e})")
        if np.linalg.det(r) < 0:
            raise DomainError("rotation has determinant -1 (reflection)")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(np.eye(3), np.zeros(3))

    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def view_axis(self) -> np.ndarray:
        """World-frame direction of the camera's +z axis."""
        return self.rotation.T @ np.array([0.0, 0.0, 1.0])

    def inverse(self) -> "CameraPose":
        return CameraPose(self.rotation.T, -self.rotation @ self.translation)

    def compose(self, other: "CameraPose") -> "CameraPose":
        """Transform applying `other` first, then `self`."""
        return CameraPose(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def to_world(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        return (pts - self.translation) @ self.rotation


def intrinsics_from_fov(fovx: float, fovy: float, width: int, height: int) -> CameraIntrinsics:
    """Build intrinsics from horizontal/vertical field of view in radians."""
    if not (0.0 < fovx < math.pi) or not (0.0 < fovy < math.pi):
        raise DomainError(f"fov must lie in (0, pi), got ({fovx}, {fovy})")
    if width < 1 or height < 1:
        raise DomainError("image size must be at least 1x1")
    fx = width / (2.0 * math.tan(fovx / 2.0))
    fy = height / (2.0 * math.tan(fovy / 2.0))
    return CameraIntrinsics(fx=fx, fy=fy, cx=width / 2.0, cy=height / 2.0, width=width, height=height)


def pad_intrinsics(k: CameraIntrinsics, n: int) -> CameraIntrinsics:
    """Intrinsics for an image mirror-padded by n pixels on every side.

    Keeps the field of view of the original image and re-centers the
    principal point, so the focal lengths grow by (W+2n)/W.
    """
    if n < 0:
        raise DomainError(f"padding must be nonnegative, got {n}")
    if n == 0:
        return k
    w2, h2 = k.width + 2 * n, k.height + 2 * n
    fx = w2 / (2.0 * math.tan(k.fov_x / 2.0))
    fy = h2 / (2.0 * math.tan(k.fov_y / 2.0))
    return CameraIntrinsics(fx=fx, fy=fy, cx=w2 / 2.0, cy=h2 / 2.0, width=w2, height=h2)


def shift_intrinsics(k: CameraIntrinsics, n: int) -> CameraIntrinsics:
    """Intrinsics for an n-pixel border that extends the field of view.

    Focal lengths are unchanged and the principal point shifts by n, so
    rays through the original pixels are exactly preserved.  This is the
    geometrically faithful model of a padded image and is what the dense
    per-pixel operators use internally.
    """
    if n < 0:
        raise DomainError(f"padding must be nonnegative, got {n}")
    if n == 0:
        return k
    return CameraIntrinsics(
        fx=k.fx, fy=k.fy, cx=k.cx + n, cy=k.cy + n,
        width=k.width + 2 * n, height=k.height + 2 * n,
    )


def unproject(u: float, v: float, d: float, k: CameraIntrinsics, pose: CameraPose) -> np.ndarray:
    """Backproject pixel (u, v) at z-depth d to a world-frame 3D point."""
    if d <= 0 or not math.isfinite(d):
        raise InvalidDepthError(f"depth must be finite and positive, got {d}")
    p_cam = np.array([d * (u - k.cx) / k.fx, d * (v - k.cy) / k.fy, d])
    return pose.to_world(p_cam)


def project(p, k: CameraIntrinsics, pose: CameraPose):
    """Project a world point to (u, v, depth).  Raises BehindCameraError if z <= 0.

    Out-of-bounds projections are returned as-is; bounds are the caller's
    concern (they are distinct from the behind-camera case).
    """
    p_cam = pose.to_camera(np.asarray(p, dtype=np.float64))
    z = p_cam[2]
    if z <= 0:
        raise BehindCameraError(f"point has camera-frame z={z}")
    u = k.fx * p_cam[0] / z + k.cx
    v = k.fy * p_cam[1] / z + k.cy
    return u, v, z


def unproject_grid(depth: np.ndarray, k: CameraIntrinsics) -> np.ndarray:
    """Backproject a full depth map to camera-frame points, shape (H, W, 3).

    Invalid (nonpositive) depths produce the zero point; callers carry the
    validity mask separately.
    """
    d = np.asarray(depth, dtype=np.float64)
    h, w = d.shape
    u = np.arange(w, dtype=np.float64)
    v = np.arange(h, dtype=np.float64)
    x = (u - k.cx) / k.fx
    y = (v - k.cy) / k.fy
    pts = np.empty((h, w, 3))
    pts[:, :, 0] = d * x[None, :]
    pts[:, :, 1] = d * y[:, None]
    pts[:, :, 2] = d
    return pts


def project_points(points: np.ndarray, k: CameraIntrinsics, pose: CameraPose):
    """Vectorized projection of world points, shape (N, 3).

    Returns (u, v, z, in_front) where in_front marks z > 0.  u, v are only
    meaningful where in_front is set.
    """
    p_cam = pose.to_camera(points)
    z = p_cam[:, 2]
    in_front = z > 0
    zsafe = np.where(in_front, z, 1.0)
    u = k.fx * p_cam[:, 0] / zsafe + k.cx
    v = k.fy * p_cam[:, 1] / zsafe + k.cy
    return u, v, z, in_front
