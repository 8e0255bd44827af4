"""Depth-projection densification of a surfel cloud.

Consistency-checked refined depth pixels are backprojected into new
surfels: normal-aligned rotations, neighbor-distance scales, SH0 color
from the photograph, and a reset opacity.  `adaptive_densify` drives the
whole per-view schedule with region-dependent consistency tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .camera import project_points, unproject_grid
from .consistency import RegionThresholds, consistency_mask, select_source_views
from .errors import ConfigError, DomainError
from .maps import DepthMap, NormalMap
from .quantile import KdeConfig, segment_depth
from .refine import RefineConfig, estimate_normals, joint_bilateral_filter, refine_depth
from .surfels import DISK_AXIS, SurfelCloud
from .view import View

SH_C0 = 0.28209479177387814  # Y00 basis constant 1 / (2 sqrt(pi))
MIN_SCALE = 1e-6
ANTIPODAL_EPS = 1e-8


@dataclass(frozen=True)
class DensifyConfig:
    interval: int = 100            # iterations between densification events
    scale_threshold: float = 0.05  # primitives larger than this gate densification
    max_new_per_view: int = 200000
    stride: int = 2
    init_opacity: float = 0.1
    knn_k: int = 3

    def __post_init__(self):
        if self.interval < 1:
            raise ConfigError("interval must be >= 1")
        if not (0.0 < self.init_opacity < 1.0):
            raise ConfigError("init_opacity must lie in (0, 1)")
        if self.knn_k < 1:
            raise ConfigError("knn_k must be >= 1")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")


# ---------------------------------------------------------------------------
# Primitive initialization

def _canonical_perpendicular(r: np.ndarray) -> np.ndarray:
    """Deterministic unit vector perpendicular to r."""
    basis = np.eye(3)[np.argmin(np.abs(r))]
    p = np.cross(r, basis)
    return p / np.linalg.norm(p)


def rotation_from_normal(n, r=DISK_AXIS) -> np.ndarray:
    """Unit quaternion (w, x, y, z) rotating the reference r onto n.

    Axis-angle construction: angle arccos(n . r) about the normalized
    cross product.  Near-identity collapses to the identity quaternion;
    the antipodal case is a pi turn about the canonical perpendicular.
    """
    n = np.asarray(n, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    cross = np.cross(r, n)
    cn = np.linalg.norm(cross)
    dot = float(np.clip(np.dot(n, r), -1.0, 1.0))
    if cn < ANTIPODAL_EPS:
        if dot > 0:
            return np.array([1.0, 0.0, 0.0, 0.0])
        axis = _canonical_perpendicular(r)
        return np.array([0.0, axis[0], axis[1], axis[2]])  # cos(pi/2)=0
    axis = cross / cn
    half = 0.5 * math.acos(dot)
    s = math.sin(half)
    return np.array([math.cos(half), s * axis[0], s * axis[1], s * axis[2]])


def rotations_from_normals(normals: np.ndarray, r=DISK_AXIS) -> np.ndarray:
    """Vectorized rotation_from_normal over rows."""
    n = np.asarray(normals, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    cross = np.cross(np.broadcast_to(r, n.shape), n)
    cn = np.linalg.norm(cross, axis=1)
    dot = np.clip(n @ r, -1.0, 1.0)
    out = np.zeros((len(n), 4))
    regular = cn >= ANTIPODAL_EPS
    half = 0.5 * np.arccos(dot[regular])
    s = np.sin(half)
    out[regular, 0] = np.cos(half)
    out[regular, 1:] = cross[regular] / cn[regular, None] * s[:, None]
    aligned = ~regular & (dot > 0)
    out[aligned, 0] = 1.0
    flipped = ~regular & ~(dot > 0)
    if np.any(flipped):
        axis = _canonical_perpendicular(r)
        out[flipped, 1:] = axis
    return out


def rgb_to_sh0(color: np.ndarray) -> np.ndarray:
    """Affine RGB -> degree-0 SH coefficients."""
    return (np.asarray(color, dtype=np.float64) - 0.5) / SH_C0


def sh0_to_rgb(sh0: np.ndarray) -> np.ndarray:
    return np.asarray(sh0, dtype=np.float64) * SH_C0 + 0.5


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def scale_from_neighbors(points: np.ndarray, k: int) -> np.ndarray:
    """Mean distance to the k nearest neighbors, floored at MIN_SCALE."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < k + 1:
        raise DomainError(f"need at least k+1={k + 1} points, got {len(pts)}")
    tree = cKDTree(pts)
    dist, _ = tree.query(pts, k=k + 1)
    return np.maximum(dist[:, 1:].mean(axis=1), MIN_SCALE)


# ---------------------------------------------------------------------------
# Densification

@dataclass
class DensifyReport:
    new_per_region: dict = field(default_factory=lambda: {"near": 0, "mid": 0, "far": 0})
    processed_ids: list = field(default_factory=list)
    per_view: dict = field(default_factory=dict)
    reset_count: int = 0

    def total_new(self) -> int:
        return sum(self.new_per_region.values())


def densify_from_depth(ref: View, refined_depth: DepthMap, mask: np.ndarray,
                       normals: NormalMap, cfg: DensifyConfig):
    """New surfels from the masked pixels of a refined depth map.

    Returns (cloud, kept_pixels, skipped_normals) where kept_pixels holds
    the (row, col) source pixel of every surfel, aligned with the cloud.
    """
    h, w = refined_depth.height, refined_depth.width
    if mask.shape != (h, w) or (normals.height, normals.width) != (h, w):
        raise DomainError("mask/normals must be co-registered with the depth map")
    take = mask & refined_depth.mask
    take[np.arange(h) % cfg.stride != 0, :] = False
    take[:, np.arange(w) % cfg.stride != 0] = False
    skipped = int(np.count_nonzero(take & ~normals.mask))
    take &= normals.mask
    rows, cols = np.nonzero(take)
    if rows.size > cfg.max_new_per_view:
        idx = (np.arange(cfg.max_new_per_view, dtype=np.int64) * rows.size) // cfg.max_new_per_view
        rows, cols = rows[idx], cols[idx]
    if rows.size == 0:
        return SurfelCloud.empty(), np.zeros((0, 2), dtype=np.int64), skipped

    cam_pts = unproject_grid(refined_depth.values, ref.intrinsics)[rows, cols]
    positions = ref.pose.to_world(cam_pts)
    n_world = normals.values[rows, cols] @ ref.pose.rotation
    rotations = rotations_from_normals(n_world)
    if rows.size > cfg.knn_k:
        scale = scale_from_neighbors(positions, cfg.knn_k)
    else:
        scale = np.full(rows.size, MIN_SCALE)
    colors = ref.image.rgb[rows, cols]
    cloud = SurfelCloud(
        positions=positions,
        normals=n_world,
        rotations=rotations,
        scales=np.stack([scale, scale], axis=1),
        opacity_logits=np.full(rows.size, logit(cfg.init_opacity)),
        sh0=rgb_to_sh0(colors),
    )
    return cloud, np.stack([rows, cols], axis=1), skipped


def surfel_footprint_mask(cloud: SurfelCloud, view: View, scale_threshold: float) -> np.ndarray:
    """Union of pixel disks covered by primitives larger than the threshold.

    Each over-threshold surfel projects to a disk of radius
    max(scale) * f / z pixels; an empty cloud gates nothing (all True) so
    a fresh scene can bootstrap.
    """
    h, w = view.intrinsics.height, view.intrinsics.width
    if len(cloud) == 0:
        return np.ones((h, w), dtype=bool)
    big = cloud.scales.max(axis=1) > scale_threshold
    if not np.any(big):
        return np.zeros((h, w), dtype=bool)
    k = view.intrinsics
    f = 0.5 * (k.fx + k.fy)
    u, v, z, in_front = project_points(cloud.positions[big], k, view.pose)
    radius = cloud.scales[big].max(axis=1) * f / np.where(in_front, z, 1.0)
    out = np.zeros((h, w), dtype=bool)
    for ui, vi, ri, ok in zip(u, v, radius, in_front):
        if not ok:
            continue
        r0 = max(int(math.floor(vi - ri)), 0)
        r1 = min(int(math.ceil(vi + ri)), h - 1)
        c0 = max(int(math.floor(ui - ri)), 0)
        c1 = min(int(math.ceil(ui + ri)), w - 1)
        if r0 > r1 or c0 > c1:
            continue
        rr = np.arange(r0, r1 + 1)[:, None] - vi
        cc = np.arange(c0, c1 + 1)[None, :] - ui
        out[r0 : r1 + 1, c0 : c1 + 1] |= rr * rr + cc * cc <= ri * ri
    return out


def refine_view(view: View, cfg: RefineConfig):
    """The full single-view refinement chain: bilateral smooth, normals
    from the smoothed depth, then normal/gradient-guided averaging.
    Returns (refined DepthMap, NormalMap)."""
    smoothed = joint_bilateral_filter(view.depth, view.image, cfg)
    normals = estimate_normals(smoothed, view.intrinsics, cfg)
    refined = refine_depth(smoothed, normals, view.image, view.intrinsics, cfg)
    return refined, normals


def adaptive_densify(cloud: SurfelCloud, views, seg_cfg: KdeConfig,
                     thr: RegionThresholds, cfg: DensifyConfig,
                     refine_cfg: RefineConfig | None = None,
                     processed_ids=None, precomputed=None, collect_masks=None):
    """One densification pass over every unprocessed reference view.

    Per view: refine depth, segment it, build the region-tolerant
    consistency mask against the other views, gate by the footprint of
    over-threshold primitives, backproject new surfels, and reset
    scale/opacity of pre-existing surfels inside the densified footprint.

    Views already in `processed_ids` are skipped; the returned report
    carries the updated set, so feeding it back in makes a second pass a
    no-op.  `precomputed` may supply ({id: refined View}, {id: NormalMap})
    to skip the internal refinement; `collect_masks` (a dict) receives the
    per-view densification masks.  Returns (cloud, report).
    """
    views = sorted(views, key=lambda v: v.id)
    need = thr.max_min_views()
    if len(views) < need + 1:
        raise ConfigError(f"{len(views)} views cannot yield {need} source votes")
    refine_cfg = refine_cfg or RefineConfig()
    processed = set(processed_ids) if processed_ids else set()
    report = DensifyReport()

    if precomputed is not None:
        refined_views, refined_normals = precomputed
    else:
        refined_views = {}
        refined_normals = {}
        for v in views:
            depth, normals = refine_view(v, refine_cfg)
            refined_views[v.id] = v.with_depth(depth)
            refined_normals[v.id] = normals

    for view in views:
        if view.id in processed:
            report.per_view[view.id] = {"skipped": "already processed"}
            continue
        try:
            ref = refined_views[view.id]
            seg = segment_depth(ref.depth, seg_cfg)
            srcs = select_source_views([refined_views[v.id] for v in views], ref,
                                       min_count=need)
            passed, votes = consistency_mask(ref, srcs, seg, thr)
            gate = surfel_footprint_mask(cloud, ref, cfg.scale_threshold)
            allowed = passed & gate
            if collect_masks is not None:
                collect_masks[view.id] = allowed
            new_cloud, pixels, skipped = densify_from_depth(
                ref, ref.depth, allowed, refined_normals[view.id], cfg
            )
            region_counts = {
                "near": int(np.count_nonzero(seg.near_mask[pixels[:, 0], pixels[:, 1]]))
                if len(pixels) else 0,
                "mid": int(np.count_nonzero(seg.mid_mask[pixels[:, 0], pixels[:, 1]]))
                if len(pixels) else 0,
                "far": int(np.count_nonzero(seg.far_mask[pixels[:, 0], pixels[:, 1]]))
                if len(pixels) else 0,
            }
            cloud, n_reset = _reset_in_footprint(cloud, new_cloud, ref, allowed, cfg)
            cloud = SurfelCloud.concatenate([cloud, new_cloud])
            processed.add(view.id)
            for key in report.new_per_region:
                report.new_per_region[key] += region_counts[key]
            report.reset_count += n_reset
            report.per_view[view.id] = {
                "new": len(new_cloud),
                "rejected": int(np.count_nonzero(ref.depth.mask & ~passed)),
                "skipped_normals": skipped,
                "regions": region_counts,
            }
        except Exception as exc:  # keep going; one bad view must not kill the pass
            report.per_view[view.id] = {"error": f"{type(exc).__name__}: {exc}"}
    report.processed_ids = sorted(processed)
    return cloud, report


def _reset_in_footprint(cloud: SurfelCloud, new_cloud: SurfelCloud, ref: View,
                        footprint: np.ndarray, cfg: DensifyConfig):
    """Reinitialize scale and opacity of existing surfels whose projection
    lands inside the densified footprint, using the merged local cloud."""
    if len(cloud) == 0 or len(new_cloud) == 0:
        return cloud, 0
    k = ref.intrinsics
    u, v, z, in_front = project_points(cloud.positions, k, ref.pose)
    ui = np.rint(u).astype(np.int64)
    vi = np.rint(v).astype(np.int64)
    inside = in_front & (ui >= 0) & (ui < k.width) & (vi >= 0) & (vi < k.height)
    hit = np.zeros(len(cloud), dtype=bool)
    sel = np.nonzero(inside)[0]
    hit[sel] = footprint[vi[sel], ui[sel]]
    n_hit = int(np.count_nonzero(hit))
    if n_hit == 0:
        return cloud, 0
    merged = np.concatenate([cloud.positions[hit], new_cloud.positions])
    if len(merged) > cfg.knn_k:
        local_scale = scale_from_neighbors(merged, cfg.knn_k)[:n_hit]
    else:
        local_scale = np.full(n_hit, MIN_SCALE)
    scales = cloud.scales.copy()
    scales[hit] = local_scale[:, None]
    opac = cloud.opacity_logits.copy()
    opac[hit] = logit(cfg.init_opacity)
    return cloud.replace(scales=scales, opacity_logits=opac), n_hit
