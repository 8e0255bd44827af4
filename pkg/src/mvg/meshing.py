"""Mesh extraction from a surfel cloud.

Pipeline: crop + statistical floater removal, multi-view normal
smoothing, density-adaptive per-block voxel sizing, an implicit
occupancy field splatted from the surfels, per-block marching cubes, and
seam welding.

The default field ("signed") blends a logistic profile along each
surfel's normal, weighted by a Gaussian of the surfel scale, so the 0.5
level set passes through the surfels themselves; far from all surfels the
field is filled with the nearest surfel's half-space (1 behind, 0 in
front), which closes cavities and keeps open surfaces single-sheeted.
A literal unsigned Gaussian density field remains available as
field_mode="density" for comparison.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from . import _kernels
from .camera import project_points
from .densify import rotations_from_normals
from .errors import ConfigError, DomainError, EmptyCloudError
from .refine import RefineConfig, estimate_normals
from .surfels import SurfelCloud

BLOCK_CELLS = 32      # block edge in base voxels
DEN_EPS = 1e-12       # blend support threshold; beyond it the fill takes over
FILL_CELL_FACTOR = 4  # fill grid cell = factor * base_voxel


@dataclass(frozen=True)
class MeshConfig:
    bbox: object = None            # ((x0,y0,z0), (x1,y1,z1)) crop, None = keep all
    base_voxel: float = 0.003
    voxel_min: float = 0.001
    voxel_max: float = 0.005
    smooth_steps: int = 2
    floater_knn: int = 8
    floater_sigma: float = 2.0
    iso: float = 0.5
    smooth_mesh: bool = True       # 3x3x3 box smoothing of the field
    field_mode: str = "signed"     # "signed" or "density"
    blend_weight: float = 0.5      # normal blend toward the per-view lookup
    relax_lambda: float = 0.5      # tangent-plane relaxation step
    laplacian_steps: int = 0       # optional final mesh smoothing

    def __post_init__(self):
        if not (0 < self.voxel_min <= self.base_voxel <= self.voxel_max):
            raise ConfigError(
                f"need voxel_min <= base_voxel <= voxel_max, got "
                f"({self.voxel_min}, {self.base_voxel}, {self.voxel_max})"
            )
        if self.smooth_steps < 0:
            raise ConfigError("smooth_steps must be >= 0")
        if self.field_mode not in ("signed", "density"):
            raise ConfigError(f"unknown field_mode {self.field_mode!r}")
        if self.floater_knn < 1:
            raise ConfigError("floater_knn must be >= 1")


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3))
        t = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3))
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise DomainError("triangle indices out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if self.normals is not None:
            n = np.ascontiguousarray(np.asarray(self.normals, dtype=np.float64).reshape(-1, 3))
            if len(n) != len(v):
                raise DomainError("per-vertex normals must match vertex count")
            object.__setattr__(self, "normals", n)

    @classmethod
    def empty(cls) -> "TriangleMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    def triangle_areas(self) -> np.ndarray:
        v = self.vertices
        t = self.triangles
        return 0.5 * np.linalg.norm(
            np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]]), axis=1
        )

    def cleaned(self) -> "TriangleMesh":
        """Drop degenerate triangles (repeated vertices or zero area)."""
        t = self.triangles
        if len(t) == 0:
            return self
        distinct = (t[:, 0] != t[:, 1]) & (t[:, 1] != t[:, 2]) & (t[:, 0] != t[:, 2])
        keep = distinct & (self.triangle_areas() > 0.0)
        return TriangleMesh(self.vertices, t[keep], self.normals)


def euler_characteristic(mesh: TriangleMesh) -> int:
    t = mesh.triangles
    if len(t) == 0:
        return 0
    used = np.unique(t)
    edges = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    n_edges = len(np.unique(edges, axis=0))
    return int(len(used) - n_edges + len(t))


# ---------------------------------------------------------------------------
# Cropping and floater removal

def crop_and_filter(cloud: SurfelCloud, cfg: MeshConfig) -> SurfelCloud:
    """Crop to the config bbox, then remove statistical outliers.

    A point is a floater when its mean distance to floater_knn nearest
    neighbors exceeds mean + floater_sigma * std of that statistic.
    """
    if len(cloud) == 0:
        raise EmptyCloudError("cannot filter an empty cloud")
    kept = cloud
    if cfg.bbox is not None:
        lo = np.asarray(cfg.bbox[0], dtype=np.float64)
        hi = np.asarray(cfg.bbox[1], dtype=np.float64)
        inside = np.all((kept.positions >= lo) & (kept.positions <= hi), axis=1)
        kept = kept.select(inside)
        if len(kept) == 0:
            raise EmptyCloudError("crop box removed every point")
    k = min(cfg.floater_knn, len(kept) - 1)
    if k < 1:
        return kept
    tree = cKDTree(kept.positions)
    dist, _ = tree.query(kept.positions, k=k + 1)
    mean_d = dist[:, 1:].mean(axis=1)
    limit = mean_d.mean() + cfg.floater_sigma * mean_d.std()
    kept = kept.select(mean_d <= limit)
    if len(kept) == 0:
        raise EmptyCloudError("floater removal left no points")
    return kept


# ---------------------------------------------------------------------------
# Multi-view normal smoothing

def multiview_normal_smooth(cloud: SurfelCloud, views, steps: int,
                            normal_maps=None, cfg: MeshConfig = MeshConfig()) -> SurfelCloud:
    """Blend surfel normals toward per-view normal-map lookups, then relax
    each point onto the local tangent plane.

    Per step and view, visible points blend their normal toward the
    view's (world-frame) normal at the projected pixel; afterwards every
    point seen at least once moves along its normal by
    relax_lambda * (signed distance to the plane through its neighbors'
    centroid).  Points invisible in every view stay untouched.
    """
    if steps == 0 or len(cloud) == 0:
        return cloud
    views = sorted(views, key=lambda v: v.id)
    if normal_maps is None:
        rc = RefineConfig()
        normal_maps = {v.id: estimate_normals(v.depth, v.intrinsics, rc) for v in views}
    elif not isinstance(normal_maps, dict):
        normal_maps = {v.id: m for v, m in zip(views, normal_maps)}

    positions = cloud.positions.copy()
    normals = cloud.normals.copy()
    for _ in range(steps):
        seen = np.zeros(len(cloud), dtype=bool)
        for view in views:
            nm = normal_maps[view.id]
            k = view.intrinsics
            u, v, z, in_front = project_points(positions, k, view.pose)
            ui = np.rint(u).astype(np.int64)
            vi = np.rint(v).astype(np.int64)
            ok = in_front & (ui >= 0) & (ui < k.width) & (vi >= 0) & (vi < k.height)
            sel = np.nonzero(ok)[0]
            sel = sel[nm.mask[vi[sel], ui[sel]]]
            if sel.size == 0:
                continue
            n_cam = nm.values[vi[sel], ui[sel]]
            n_world = n_cam @ view.pose.rotation
            same_side = np.sum(n_world * normals[sel], axis=1) < 0
            n_world[same_side] = -n_world[same_side]
            blended = (1.0 - cfg.blend_weight) * normals[sel] + cfg.blend_weight * n_world
            norm = np.linalg.norm(blended, axis=1, keepdims=True)
            good = norm[:, 0] > 1e-12
            normals[sel[good]] = blended[good] / norm[good]
            seen[sel] = True
        idx = np.nonzero(seen)[0]
        if idx.size and len(cloud) > 1:
            tree = cKDTree(positions)
            kq = min(cfg.floater_knn, len(cloud) - 1)
            _, nbr = tree.query(positions[idx], k=kq + 1)
            centroids = positions[nbr[:, 1:]].mean(axis=1)
            signed = np.sum(normals[idx] * (positions[idx] - centroids), axis=1)
            positions[idx] -= cfg.relax_lambda * signed[:, None] * normals[idx]
    return cloud.replace(
        positions=positions,
        normals=normals,
        rotations=rotations_from_normals(normals),
    )


# ---------------------------------------------------------------------------
# Adaptive voxel sizing

@dataclass(frozen=True)
class BlockLayout:
    """Cubic block decomposition with a per-block voxel size.

    Voxel sizes are quantized to exact divisors of the block edge so the
    corner lattices of equal-size neighbors line up across faces.
    """

    origin: np.ndarray
    edge: float
    sizes: dict
    counts: dict

    def block_origin(self, ijk) -> np.ndarray:
        return self.origin + np.asarray(ijk, dtype=np.float64) * self.edge

    def voxel(self, ijk, base: float) -> float:
        return self.sizes.get(tuple(ijk), base)


def _quantized_voxel(edge: float, size: float, vmin: float, vmax: float) -> float:
    n_lo = max(1, math.ceil(edge / vmax))
    n_hi = max(n_lo, math.floor(edge / vmin))
    n = int(round(edge / size))
    return edge / min(max(n, n_lo), n_hi)


def adaptive_voxel_sizes(cloud: SurfelCloud, cfg: MeshConfig) -> BlockLayout:
    """Per-block voxel sizes from relative point density.

    Within each occupied 32^3-base-voxel block, the voxel size scales as
    (median_density / block_density)^(1/3) from base_voxel, clamped to
    [voxel_min, voxel_max]: denser blocks get finer voxels.
    """
    if len(cloud) == 0:
        raise EmptyCloudError("no points to size blocks from")
    edge = BLOCK_CELLS * cfg.base_voxel
    pmin = cloud.positions.min(axis=0)
    origin = np.floor(pmin / edge - 0.5) * edge
    idx = np.floor((cloud.positions - origin) / edge).astype(np.int64)
    counts = {}
    for ijk in map(tuple, idx):
        counts[ijk] = counts.get(ijk, 0) + 1
    densities = {ijk: c / edge**3 for ijk, c in counts.items()}
    median = float(np.median(np.array(list(densities.values()))))
    sizes = {}
    for ijk, rho in sorted(densities.items()):
        raw = cfg.base_voxel * (median / rho) ** (1.0 / 3.0)
        clamped = min(max(raw, cfg.voxel_min), cfg.voxel_max)
        sizes[ijk] = _quantized_voxel(edge, clamped, cfg.voxel_min, cfg.voxel_max)
    return BlockLayout(origin=origin, edge=edge, sizes=sizes, counts=counts)


# ---------------------------------------------------------------------------
# Occupancy field

@dataclass(frozen=True)
class BlockField:
    """Corner-sampled scalar field for one block: (n+1)^3 corners."""

    values: np.ndarray
    origin: np.ndarray
    voxel: float


class _HalfSpaceFill:
    """Occupancy far from every surfel: the nearest surfel's half-space.

    Sampled on a coarse grid (nearest-surfel query per cell center):
    1 behind the surfel (inside), 0 in front.  Only consulted where the
    splat support is zero, i.e. many sigma from the surface, where the
    half-space side is unambiguous.
    """

    def __init__(self, cloud: SurfelCloud, lo, hi, cell: float):
        self.lo = np.asarray(lo, dtype=np.float64) - 2 * cell
        self.cell = cell
        dims = np.maximum(np.ceil((np.asarray(hi) + 2 * cell - self.lo) / cell), 1).astype(int)
        self.dims = dims
        ax = [self.lo[a] + cell * (np.arange(dims[a]) + 0.5) for a in range(3)]
        centers = np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1).reshape(-1, 3)
        tree = cKDTree(cloud.positions)
        _, nearest = tree.query(centers)
        side = np.sum((centers - cloud.positions[nearest]) * cloud.normals[nearest], axis=1)
        self.values = (side < 0).astype(np.float64).reshape(dims)

    def lookup(self, points: np.ndarray) -> np.ndarray:
        idx = np.floor((points - self.lo) / self.cell).astype(np.int64)
        idx = np.clip(idx, 0, np.asarray(self.dims) - 1)
        return self.values[idx[:, 0], idx[:, 1], idx[:, 2]]


def _processed_blocks(layout: BlockLayout):
    """Occupied blocks plus their 26-neighborhood (splats can poke through
    faces into point-free blocks)."""
    out = set()
    for ijk in layout.counts:
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                for dk in (-1, 0, 1):
                    out.add((ijk[0] + di, ijk[1] + dj, ijk[2] + dk))
    return sorted(out)


def occupancy_from_points(cloud: SurfelCloud, layout: BlockLayout,
                          cfg: MeshConfig = MeshConfig()) -> dict:
    """Per-block corner-sampled occupancy in [0, 1].

    signed mode: Gaussian-weighted logistic along surfel normals with
    half-space fill outside the splat support (0.5 level = the surface).
    density mode: unsigned Gaussian splat normalized per block by its
    99th-percentile value.
    """
    if len(cloud) == 0:
        raise EmptyCloudError("no points to splat")
    blocks = _processed_blocks(layout)
    tree = cKDTree(cloud.positions)
    max_scale = float(cloud.scales.max()) if len(cloud) else 0.0
    fill = None
    if cfg.field_mode == "signed":
        lo = layout.block_origin(min(blocks))
        hi = layout.block_origin(max(blocks)) + layout.edge
        fill = _HalfSpaceFill(cloud, lo, hi, FILL_CELL_FACTOR * cfg.base_voxel)

    fields = {}
    for ijk in blocks:
        voxel = layout.voxel(ijk, cfg.base_voxel)
        nb = int(round(layout.edge / voxel))
        origin_b = layout.block_origin(ijk)
        # one ghost corner on each side for box smoothing
        corner_origin = origin_b - voxel
        n_corner = nb + 3
        reach_cap = 3.0 * min(max(max_scale, voxel), 3.0 * voxel)
        radius = (math.sqrt(3.0) / 2.0) * (n_corner - 1) * voxel + reach_cap + voxel
        center = corner_origin + 0.5 * (n_corner - 1) * voxel
        cand = sorted(tree.query_ball_point(center, radius))
        if not cand and cfg.field_mode == "density":
            continue
        pos = cloud.positions[cand]
        sig = np.clip(cloud.scales[cand].max(axis=1) if cand else np.zeros(0),
                      voxel, 3.0 * voxel)
        dims = (n_corner, n_corner, n_corner)
        if cfg.field_mode == "signed":
            nrm = cloud.normals[cand]
            num, den = _kernels.splat_signed(pos, nrm, sig, corner_origin, voxel, dims)
            vals = np.empty(dims)
            supported = den > DEN_EPS
            np.divide(num, den, out=vals, where=supported)
            if not np.all(supported):
                ax = corner_origin[0] + voxel * np.arange(n_corner)
                ay = corner_origin[1] + voxel * np.arange(n_corner)
                az = corner_origin[2] + voxel * np.arange(n_corner)
                gx, gy, gz = np.meshgrid(ax, ay, az, indexing="ij")
                corners = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)
                filled = fill.lookup(corners).reshape(dims)
                vals = np.where(supported, vals, filled)
            vals = np.clip(vals, 0.0, 1.0)
        else:
            acc = _kernels.splat_density(pos, sig, corner_origin, voxel, dims)
            p99 = float(np.percentile(acc, 99)) if np.any(acc > 0) else 0.0
            vals = np.clip(acc / p99, 0.0, 1.0) if p99 > 0 else acc
        if cfg.smooth_mesh:
            vals = ndimage.uniform_filter(vals, size=3, mode="nearest")
        vals = vals[1:-1, 1:-1, 1:-1]  # trim ghosts
        if np.all(vals < cfg.iso) or np.all(vals >= cfg.iso):
            continue
        fields[ijk] = BlockField(values=vals, origin=origin_b, voxel=voxel)
    return fields


# ---------------------------------------------------------------------------
# Marching cubes

def marching_cubes(field: np.ndarray, iso: float, voxel: float, origin) -> TriangleMesh:
    """Standard 256-case marching cubes with edge interpolation.

    Vertices are emitted in world coordinates; triangles are wound so
    their normals point along the field gradient (toward larger values).
    Iso levels outside the field range simply yield an empty mesh.
    """
    f = np.asarray(field, dtype=np.float64)
    if f.ndim != 3 or min(f.shape) < 2:
        raise DomainError(f"field must be a 3D grid with dims >= 2, got {f.shape}")
    tris = _kernels.mc_core(f, float(iso), np.asarray(origin, dtype=np.float64), float(voxel))
    return weld_triangles(tris, tol=max(voxel, 1.0) * 1e-9)


def weld_triangles(tris: np.ndarray, tol: float) -> TriangleMesh:
    """Merge vertices coincident within tol; drop degenerate triangles."""
    if len(tris) == 0:
        return TriangleMesh.empty()
    flat = tris.reshape(-1, 3)
    keys = np.round(flat / tol).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    verts = flat[first]
    faces = inverse.reshape(-1, 3)
    return TriangleMesh(verts, faces).cleaned()


def laplacian_smooth(mesh: TriangleMesh, steps: int = 1, lam: float = 0.5) -> TriangleMesh:
    """Uniform-weight Laplacian smoothing of vertex positions."""
    if steps <= 0 or len(mesh.triangles) == 0:
        return mesh
    v = mesh.vertices.copy()
    t = mesh.triangles
    for _ in range(steps):
        acc = np.zeros_like(v)
        cnt = np.zeros(len(v))
        for a, b in ((0, 1), (1, 2), (2, 0)):
            np.add.at(acc, t[:, a], v[t[:, b]])
            np.add.at(acc, t[:, b], v[t[:, a]])
            np.add.at(cnt, t[:, a], 1)
            np.add.at(cnt, t[:, b], 1)
        has = cnt > 0
        mean = acc[has] / cnt[has][:, None]
        v[has] += lam * (mean - v[has])
    return TriangleMesh(v, t, mesh.normals)


# ---------------------------------------------------------------------------
# Full extraction

def extract_mesh(cloud: SurfelCloud, views, cfg: MeshConfig = MeshConfig()) -> TriangleMesh:
    """crop/filter -> normal smoothing -> adaptive voxels -> occupancy ->
    per-block marching cubes -> seam welding -> cleanup."""
    if len(cloud) == 0:
        raise EmptyCloudError("cannot mesh an empty cloud")
    kept = crop_and_filter(cloud, cfg)
    kept = multiview_normal_smooth(kept, views, cfg.smooth_steps, cfg=cfg)
    layout = adaptive_voxel_sizes(kept, cfg)
    fields = occupancy_from_points(kept, layout, cfg)
    pieces = []
    for ijk in sorted(fields):
        bf = fields[ijk]
        tris = _kernels.mc_core(bf.values, cfg.iso, bf.origin, bf.voxel)
        if len(tris):
            pieces.append(tris)
    if not pieces:
        return TriangleMesh.empty()
    mesh = weld_triangles(np.concatenate(pieces), tol=0.5 * cfg.voxel_min)
    # occupancy decreases outward, so flip the gradient-ascent winding
    mesh = TriangleMesh(mesh.vertices, mesh.triangles[:, ::-1])
    if cfg.laplacian_steps:
        mesh = laplacian_smooth(mesh, cfg.laplacian_steps)
    return mesh.cleaned()
