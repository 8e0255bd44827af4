"""Depth and normal refinement from image gradients.

The refinement chain: mirror-pad the rendered depth, smooth it with a
joint bilateral filter guided by the photograph, recompute normals from
8-neighbor cross products of the backprojected points, then replace each
depth by a gradient-weighted average of its neighbors' depths transported
along the local tangent plane.  An edge-aware discrepancy metric compares
a depth map against its refined version.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .camera import CameraIntrinsics, shift_intrinsics, unproject_grid
from .errors import DomainError
from .maps import DepthMap, ImageBuffer, NormalMap, reflect_pad

GAMMA_EPS = 1e-8


@dataclass(frozen=True)
class RefineConfig:
    pad_n: int = 1
    sigma_spatial: float = 1.0
    sigma_range: float = 0.1
    alpha: float = 10.0
    # fidelity switch: False divides the 8-neighbor sum by 8 instead of
    # by the weight total, which shrinks depth wherever weights < 1
    normalize_weights: bool = True

    def __post_init__(self):
        if self.pad_n < 1:
            raise DomainError("pad_n must be >= 1 (the 8-neighborhood needs one ring)")
        if self.sigma_spatial <= 0 or self.sigma_range <= 0 or self.alpha <= 0:
            raise DomainError("sigma_spatial, sigma_range, and alpha must be positive")


def mirror_pad(m, n: int):
    """Reflect-101 padding for any of the dense map types."""
    if isinstance(m, DepthMap):
        return DepthMap(reflect_pad(m.values, n))
    if isinstance(m, NormalMap):
        return NormalMap(reflect_pad(m.values, n), reflect_pad(m.mask, n))
    if isinstance(m, ImageBuffer):
        return ImageBuffer(reflect_pad(m.rgb, n))
    raise DomainError(f"cannot mirror-pad {type(m).__name__}")


def center_crop(m, n: int):
    """Inverse of mirror_pad: drop an n-pixel border."""
    if n == 0:
        return m
    if isinstance(m, DepthMap):
        return DepthMap(m.values[n:-n, n:-n])
    if isinstance(m, NormalMap):
        return NormalMap(m.values[n:-n, n:-n], m.mask[n:-n, n:-n])
    if isinstance(m, ImageBuffer):
        return ImageBuffer(m.rgb[n:-n, n:-n])
    raise DomainError(f"cannot crop {type(m).__name__}")


def _spatial_weights(sigma_spatial: float) -> np.ndarray:
    w = np.empty(9)
    i = 0
    for dv in (-1, 0, 1):
        for du in (-1, 0, 1):
            w[i] = np.exp(-(du * du + dv * dv) / (2.0 * sigma_spatial * sigma_spatial))
            i += 1
    return w


def joint_bilateral_filter(d: DepthMap, guide: ImageBuffer, cfg: RefineConfig) -> DepthMap:
    """3x3 joint bilateral filter: range kernel on the guide luminance."""
    if (d.width, d.height) != (guide.width, guide.height):
        raise DomainError(
            f"depth {d.width}x{d.height} and guide {guide.width}x{guide.height} differ"
        )
    depth_p = reflect_pad(d.values, 1)
    lum_p = reflect_pad(guide.luminance, 1)
    valid_p = depth_p > 0
    out = _kernels.bilateral_3x3(
        depth_p, lum_p, valid_p,
        _spatial_weights(cfg.sigma_spatial),
        1.0 / (2.0 * cfg.sigma_range * cfg.sigma_range),
    )
    return DepthMap(out)


def estimate_normals(d: DepthMap, k: CameraIntrinsics, cfg: RefineConfig) -> NormalMap:
    """Camera-frame normals from 8-neighbor cross products.

    The depth map is mirror-padded so border pixels keep a full
    neighborhood; backprojection uses border-extended intrinsics so the
    original pixels' rays are unchanged.  Output normals are unit length
    and oriented toward the camera.
    """
    if cfg.pad_n >= min(d.width, d.height):
        raise DomainError("pad_n too large for this map")
    depth_p = reflect_pad(d.values, cfg.pad_n)
    k_p = shift_intrinsics(k, cfg.pad_n)
    points_p = unproject_grid(depth_p, k_p)
    valid_p = depth_p > 0
    values, valid = _kernels.normals_8n(points_p, valid_p, cfg.pad_n)
    return NormalMap(values, valid)


def depth_adjustment_factors(nrm: NormalMap, k_p: CameraIntrinsics, u0: int, v0: int):
    """Normal-vs-ray factors for the pixel (u0, v0) and its surroundings.

    Returns (eta, gamma) where eta = n . ray(u0, v0) for the center
    pixel's normal n, and gamma is the map of n . ray(u, v) over the
    whole grid of `k_p` with that same normal.  For points on the plane
    through the center with normal n, depth(u0,v0)/depth(u,v) equals
    gamma(u,v)/eta.
    """
    if not nrm.mask[v0, u0]:
        raise DomainError(f"no valid normal at ({u0}, {v0})")
    n = nrm.values[v0, u0]
    u = (np.arange(k_p.width) - k_p.cx) / k_p.fx
    v = (np.arange(k_p.height) - k_p.cy) / k_p.fy
    gamma = n[0] * u[None, :] + n[1] * v[:, None] + n[2]
    eta = float(gamma[v0, u0])
    return eta, gamma


@dataclass(frozen=True)
class RefineStats:
    fallback_pixels: int  # valid pixels whose entire neighborhood was excluded


def refine_depth_full(d: DepthMap, nrm: NormalMap, img: ImageBuffer,
                      k: CameraIntrinsics, cfg: RefineConfig):
    """refine_depth plus diagnostics; see refine_depth."""
    shapes = {(d.width, d.height), (nrm.width, nrm.height), (img.width, img.height)}
    if len(shapes) != 1:
        raise DomainError(f"depth/normals/image sizes differ: {shapes}")
    n = cfg.pad_n
    depth_p = reflect_pad(d.values, n)
    lum_p = reflect_pad(img.luminance, n)
    valid_p = depth_p > 0
    k_p = shift_intrinsics(k, n)
    ray_x = (np.arange(k_p.width) - k_p.cx) / k_p.fx
    ray_y = (np.arange(k_p.height) - k_p.cy) / k_p.fy
    normals = np.where(nrm.mask[:, :, None], nrm.values, [0.0, 0.0, 1.0])
    out, fallback = _kernels.refine_avg(
        depth_p, lum_p, valid_p, normals, ray_x, ray_y, n,
        cfg.alpha, GAMMA_EPS, cfg.normalize_weights,
    )
    # pixels without a usable normal keep their input depth
    no_normal = d.mask & ~nrm.mask
    if np.any(no_normal):
        out = np.where(no_normal, d.values, out)
        fallback += int(np.count_nonzero(no_normal))
    return DepthMap(out), RefineStats(fallback_pixels=fallback)


def refine_depth(d: DepthMap, nrm: NormalMap, img: ImageBuffer,
                 k: CameraIntrinsics, cfg: RefineConfig) -> DepthMap:
    """Weighted-average depth over the 8-neighborhood (see module docs).

    Exact on planes when the normals are exact; averages away per-pixel
    noise elsewhere.  Pixels whose neighbors are all excluded keep their
    input depth (counted in refine_depth_full's diagnostics).
    """
    return refine_depth_full(d, nrm, img, k, cfg)[0]


# ---------------------------------------------------------------------------
# Edge-aware discrepancy

SCHARR_X = np.array([[-3.0, 0.0, 3.0], [-10.0, 0.0, 10.0], [-3.0, 0.0, 3.0]])
SCHARR_Y = SCHARR_X.T


def scharr_edges(lum: np.ndarray) -> np.ndarray:
    """Scharr gradient magnitude followed by non-maximum suppression."""
    lp = reflect_pad(lum, 1)
    h, w = lum.shape
    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    for i in range(3):
        for j in range(3):
            sl = lp[i : i + h, j : j + w]
            gx += SCHARR_X[i, j] * sl
            gy += SCHARR_Y[i, j] * sl
    mag = np.hypot(gx, gy)
    theta = np.mod(np.arctan2(gy, gx), np.pi)
    sector = ((theta + np.pi / 8.0) // (np.pi / 4.0)).astype(np.int64) % 4
    mp = reflect_pad(mag, 1)
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}  # (dv, du) per sector
    keep = np.zeros((h, w), dtype=bool)
    for s, (dv, du) in offsets.items():
        ahead = mp[1 + dv : 1 + dv + h, 1 + du : 1 + du + w]
        behind = mp[1 - dv : 1 - dv + h, 1 - du : 1 - du + w]
        keep |= (sector == s) & (mag >= ahead) & (mag >= behind)
    return np.where(keep, mag, 0.0)


def edge_aware_discrepancy(d: DepthMap, d_avg: DepthMap, img: ImageBuffer) -> float:
    """Mean edge-weighted log difference between a depth map and its refinement.

    Per pixel: (lam_x + lam_y) * log(1 + |D - D_avg|), where the lambdas
    downweight pixels whose forward neighbor in x or y sits across an
    image edge (Scharr magnitude after non-maximum suppression).  Pixels
    invalid in either map are skipped.
    """
    if d.values.shape != d_avg.values.shape or d.values.shape != img.luminance.shape:
        raise DomainError("edge_aware_discrepancy inputs must share one size")
    edges = scharr_edges(img.luminance)
    # forward differences, clamped at the far border
    ex = np.abs(np.diff(edges, axis=1, append=edges[:, -1:]))
    ey = np.abs(np.diff(edges, axis=0, append=edges[-1:, :]))
    lam_x = np.exp(-ex)
    lam_y = np.exp(-ey)
    diff = np.log1p(np.abs(d.values - d_avg.values))
    both = d.mask & d_avg.mask
    if not np.any(both):
        return 0.0
    per_pixel = (lam_x + lam_y) * diff
    return float(np.mean(per_pixel[both]))
