"""Dense per-pixel map types: depth, normals, RGB images.

Invalid depth is encoded as 0 inside the array plus the derived boolean
mask; every consumer checks the mask rather than trusting raw values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError

UNIT_NORM_TOL = 1e-6

# Rec. 601 luma weights; the toolkit's single definition of "intensity".
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel z-depth in meters; entries <= 0 mean "no depth"."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise DomainError(f"depth map must be 2D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("depth map contains non-finite values")
        if np.any(v < 0):
            raise DomainError("negative depth; use 0 for invalid pixels")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def mask(self) -> np.ndarray:
        return self.values > 0


@dataclass(frozen=True)
class NormalMap:
    """Per-pixel unit normals with an explicit validity mask."""

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        m = np.asarray(self.mask, dtype=bool)
        if v.ndim != 3 or v.shape[2] != 3:
            raise DomainError(f"normal map must be (H, W, 3), got {v.shape}")
        if m.shape != v.shape[:2]:
            raise DomainError("normal map mask shape mismatch")
        norms = np.linalg.norm(v[m], axis=-1)
        if norms.size and np.max(np.abs(norms - 1.0)) > UNIT_NORM_TOL:
            raise DomainError("valid normals must have unit length")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "mask", _frozen(m))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ImageBuffer:
    """RGB image with channels in [0, 1]."""

    rgb: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.rgb, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 3:
            raise DomainError(f"image must be (H, W, 3), got {v.shape}")
        if not np.all(np.isfinite(v)) or v.min() < 0.0 or v.max() > 1.0:
            raise DomainError("image channels must lie in [0, 1]")
        object.__setattr__(self, "rgb", _frozen(v))

    @property
    def height(self) -> int:
        return self.rgb.shape[0]

    @property
    def width(self) -> int:
        return self.rgb.shape[1]

    @property
    def luminance(self) -> np.ndarray:
        return self.rgb @ LUMA_WEIGHTS


def reflect_pad(arr: np.ndarray, n: int) -> np.ndarray:
    """Mirror padding without repeating the edge sample (reflect-101).

    Pads the first two axes by n; trailing axes (e.g. RGB channels) are
    left alone.  n must be strictly smaller than both padded dimensions.
    """
    if n < 0:
        raise DomainError(f"padding must be nonnegative, got {n}")
    if n == 0:
        return np.asarray(arr)
    a = np.asarray(arr)
    if n >= a.shape[0] or n >= a.shape[1]:
        raise DomainError(
            f"padding {n} too large for shape {a.shape[:2]} (reflect-101 needs n < size)"
        )
    pad = [(n, n), (n, n)] + [(0, 0)] * (a.ndim - 2)
    return np.pad(a, pad, mode="reflect")
