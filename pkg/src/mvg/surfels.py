"""Oriented surfel clouds: the densified Gaussian-primitive set."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

QUAT_TOL = 1e-6
AXIS_TOL = 1e-6

# Canonical disk axis: surfel quaternions rotate this onto the normal.
DISK_AXIS = np.array([0.0, 0.0, 1.0])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors by unit quaternions (w, x, y, z); broadcasts over rows."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    w = q[..., :1]
    u = q[..., 1:]
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = (float(c) for c in np.asarray(q, dtype=np.float64))
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def _frozen(arr, dtype=np.float64) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(arr, dtype=dtype))
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class SurfelCloud:
    """Columnar storage for N surfels.

    positions      (N, 3) world meters
    normals        (N, 3) unit vectors
    rotations      (N, 4) unit quaternions (w, x, y, z) mapping (0,0,1) -> normal
    scales         (N, 2) tangent-plane extents, meters, > 0
    opacity_logits (N,)
    sh0            (N, 3) degree-0 SH color coefficients
    """

    positions: np.ndarray
    normals: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    opacity_logits: np.ndarray
    sh0: np.ndarray

    def __post_init__(self):
        pos = _frozen(self.positions)
        nrm = _frozen(self.normals)
        rot = _frozen(self.rotations)
        scl = _frozen(self.scales)
        opa = _frozen(self.opacity_logits)
        sh0 = _frozen(self.sh0)
        n = pos.shape[0]
        shapes = {
            "positions": (pos, (n, 3)),
            "normals": (nrm, (n, 3)),
            "rotations": (rot, (n, 4)),
            "scales": (scl, (n, 2)),
            "opacity_logits": (opa, (n,)),
            "sh0": (sh0, (n, 3)),
        }
        for name, (arr, want) in shapes.items():
            if arr.shape != want:
                raise DomainError(f"{name} must have shape {want}, got {arr.shape}")
        if n:
            qn = np.linalg.norm(rot, axis=1)
            if np.max(np.abs(qn - 1.0)) > QUAT_TOL:
                raise DomainError("rotations must be unit quaternions")
            if np.min(scl) <= 0:
                raise DomainError("scales must be strictly positive")
            err = np.linalg.norm(quat_rotate(rot, DISK_AXIS) - nrm, axis=1)
            if np.max(err) > AXIS_TOL:
                raise DomainError(
                    f"rotation does not map the disk axis onto the normal (max err {np.max(err):.2e})"
                )
        for arr in (pos, nrm, rot, scl, opa, sh0):
            if not np.all(np.isfinite(arr)):
                raise DomainError("surfel attributes must be finite")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "normals", nrm)
        object.__setattr__(self, "rotations", rot)
        object.__setattr__(self, "scales", scl)
        object.__setattr__(self, "opacity_logits", opa)
        object.__setattr__(self, "sh0", sh0)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @classmethod
    def empty(cls) -> "SurfelCloud":
        z = np.zeros((0, 3))
        return cls(z, z, np.zeros((0, 4)), np.zeros((0, 2)), np.zeros(0), np.zeros((0, 3)))

    def select(self, index) -> "SurfelCloud":
        return SurfelCloud(
            self.positions[index],
            self.normals[index],
            self.rotations[index],
            self.scales[index],
            self.opacity_logits[index],
            self.sh0[index],
        )

    @staticmethod
    def concatenate(clouds) -> "SurfelCloud":
        clouds = [c for c in clouds]
        if not clouds:
            return SurfelCloud.empty()
        return SurfelCloud(
            np.concatenate([c.positions for c in clouds]),
            np.concatenate([c.normals for c in clouds]),
            np.concatenate([c.rotations for c in clouds]),
            np.concatenate([c.scales for c in clouds]),
            np.concatenate([c.opacity_logits for c in clouds]),
            np.concatenate([c.sh0 for c in clouds]),
        )

    def replace(self, **arrays) -> "SurfelCloud":
        fields = dict(
            positions=self.positions,
            normals=self.normals,
            rotations=self.rotations,
            scales=self.scales,
            opacity_logits=self.opacity_logits,
            sh0=self.sh0,
        )
        fields.update(arrays)
        return SurfelCloud(**fields)
