"""Synthetic scenes with analytic ground truth, metrics, and test oracles.

Two surface families (plane, sphere) are enough to exercise flat, curved,
silhouette, and occlusion-free regimes with closed-form depth, normals,
and SDF.  Images are Lambertian-shaded with a procedural albedo so image
gradients are nontrivial.

The brute-force oracles at the bottom (`oracle_*`) validate the optimized
library paths in the tests.  They are deliberately loop-based and do not
share code with what they check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .camera import CameraIntrinsics, CameraPose, intrinsics_from_fov
from .errors import ConfigError, DomainError
from .maps import DepthMap, ImageBuffer, NormalMap
from .meshing import TriangleMesh
from .view import View

RAYCAST_TOL = 1e-9


# ---------------------------------------------------------------------------
# Surfaces

@dataclass(frozen=True)
class PlaneSurface:
    point: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.point, dtype=np.float64).reshape(3)
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        nn = np.linalg.norm(n)
        if nn == 0:
            raise ConfigError("plane normal must be nonzero")
        object.__setattr__(self, "point", p)
        object.__setattr__(self, "normal", n / nn)

    def sdf(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return (pts - self.point) @ self.normal

    def surface_normal(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return np.broadcast_to(self.normal, pts.shape).copy()

    def raycast(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Ray parameter per direction (origin + s * dir), NaN for misses."""
        den = dirs @ self.normal
        num = (self.point - origin) @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            s = num / den
        s = np.where(np.abs(den) > 1e-15, s, np.nan)
        return np.where(s > 0, s, np.nan)

    def to_dict(self) -> dict:
        return {"kind": "plane", "point": self.point.tolist(), "normal": self.normal.tolist()}


@dataclass(frozen=True)
class SphereSurface:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        if self.radius <= 0:
            raise ConfigError("sphere radius must be positive")
        object.__setattr__(self, "center", c)

    def sdf(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        return np.linalg.norm(pts - self.center, axis=-1) - self.radius

    def surface_normal(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        d = pts - self.center
        n = np.linalg.norm(d, axis=-1, keepdims=True)
        return d / np.where(n > 0, n, 1.0)

    def raycast(self, origin: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        oc = origin - self.center
        a = np.sum(dirs * dirs, axis=-1)
        b = 2.0 * (dirs @ oc)
        c = float(oc @ oc) - self.radius * self.radius
        disc = b * b - 4.0 * a * c
        hit = disc >= 0
        sq = np.sqrt(np.where(hit, disc, 0.0))
        s = (-b - sq) / (2.0 * a)  # near intersection
        return np.where(hit & (s > 0), s, np.nan)

    def to_dict(self) -> dict:
        return {"kind": "sphere", "center": self.center.tolist(), "radius": self.radius}


def surface_from_dict(doc: dict):
    kind = doc.get("kind")
    if kind == "plane":
        return PlaneSurface(np.asarray(doc["point"]), np.asarray(doc["normal"]))
    if kind == "sphere":
        return SphereSurface(np.asarray(doc["center"]), float(doc["radius"]))
    raise ConfigError(f"unknown surface kind {kind!r}")


# ---------------------------------------------------------------------------
# Camera rigs

@dataclass(frozen=True)
class RigSpec:
    """Cameras on a cone around the target's front (-z) axis.

    cone_deg is the half-angle from the front axis: 0 puts every camera
    straight in front of the target (use count=1 for a single
    fronto-parallel view); larger values spread the ring out.  With
    `alternate` set, odd cameras flip to the mirrored cone (polar angle
    180 - cone_deg), which surrounds a closed object completely — every
    surface point is then observed head-on by some camera.
    """

    count: int = 6
    distance: float = 5.0
    target: tuple = (0.0, 0.0, 5.0)
    cone_deg: float = 35.0
    fov_deg: float = 60.0
    width: int = 256
    height: int = 256
    alternate: bool = False


def look_at(eye, target, up_hint=(0.0, 1.0, 0.0)) -> CameraPose:
    """World-to-camera pose for a camera at `eye` looking at `target`."""
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    zn = np.linalg.norm(z)
    if zn == 0:
        raise ConfigError("look_at: eye and target coincide")
    z = z / zn
    up = np.asarray(up_hint, dtype=np.float64)
    x = np.cross(up, z)
    if np.linalg.norm(x) < 1e-12:
        x = np.cross(np.array([1.0, 0.0, 0.0]), z)
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    r = np.stack([x, y, z])
    return CameraPose(r, -r @ eye)


def rig_poses(rig: RigSpec):
    target = np.asarray(rig.target, dtype=np.float64)
    poses = []
    for i in range(rig.count):
        cone = math.radians(rig.cone_deg)
        if rig.alternate and i % 2 == 1:
            cone = math.pi - cone
        az = 2.0 * math.pi * i / rig.count + 0.3  # avoid axis-aligned degeneracies
        direction = np.array(
            [math.sin(cone) * math.cos(az), math.sin(cone) * math.sin(az), -math.cos(cone)]
        )
        poses.append(look_at(target + rig.distance * direction, target))
    return poses


# ---------------------------------------------------------------------------
# Scene generation

LIGHT_DIR = np.array([0.30, -0.25, 0.92])
LIGHT_DIR = LIGHT_DIR / np.linalg.norm(LIGHT_DIR)
AMBIENT = 0.25
BACKGROUND = 0.15


@dataclass(frozen=True)
class SyntheticScene:
    surface: object
    views: list            # depth carries the requested noise
    gt_depths: list        # exact ray-cast depth
    gt_normals: list       # exact camera-frame normals
    noise_sigma: float
    seed: int

    def sdf(self, pts: np.ndarray) -> np.ndarray:
        return self.surface.sdf(pts)

    def visibility(self, points: np.ndarray, view: View, min_cos: float = 0.0) -> np.ndarray:
        """True where a world point is seen by `view`: in front, in bounds,
        unoccluded (convex front-facing for the sphere), and observed at an
        incidence cosine above min_cos.  min_cos > 0 restricts to points
        the view actually resolves rather than grazes."""
        k, pose = view.intrinsics, view.pose
        p_cam = pose.to_camera(points)
        z = p_cam[:, 2]
        ok = z > 0
        zs = np.where(ok, z, 1.0)
        u = k.fx * p_cam[:, 0] / zs + k.cx
        v = k.fy * p_cam[:, 1] / zs + k.cy
        ok &= (u >= 0) & (u <= k.width - 1) & (v >= 0) & (v <= k.height - 1)
        n = self.surface.surface_normal(points)
        to_cam = pose.center() - points
        to_cam = to_cam / np.linalg.norm(to_cam, axis=1, keepdims=True)
        incidence = np.sum(n * to_cam, axis=1)
        if isinstance(self.surface, SphereSurface):
            ok &= incidence > max(min_cos, 0.0)
        elif min_cos > 0.0:
            ok &= np.abs(incidence) > min_cos
        return ok


def _albedo(pts: np.ndarray) -> np.ndarray:
    """Smooth procedural RGB albedo in roughly [0.25, 0.85]."""
    x, y, z = pts[..., 0], pts[..., 1], pts[..., 2]
    r = 0.55 + 0.25 * np.sin(3.1 * x + 1.7 * y)
    g = 0.55 + 0.25 * np.sin(2.3 * y + 1.1 * z + 1.0)
    b = 0.55 + 0.25 * np.sin(2.7 * z + 1.9 * x + 2.0)
    return np.stack([r, g, b], axis=-1)


def render_view(surface, k: CameraIntrinsics, pose: CameraPose):
    """Exact ray cast: returns (depth (H,W), normals_cam (H,W,3), rgb (H,W,3))."""
    h, w = k.height, k.width
    u = (np.arange(w) - k.cx) / k.fx
    v = (np.arange(h) - k.cy) / k.fy
    rays_cam = np.empty((h, w, 3))
    rays_cam[:, :, 0] = u[None, :]
    rays_cam[:, :, 1] = v[:, None]
    rays_cam[:, :, 2] = 1.0
    dirs = rays_cam.reshape(-1, 3) @ pose.rotation  # R^T r, world frame
    origin = pose.center()
    s = surface.raycast(origin, dirs)
    hit = np.isfinite(s)
    depth = np.where(hit, s, 0.0).reshape(h, w)

    pts = origin + np.where(hit, s, 1.0)[:, None] * dirs
    n_world = surface.surface_normal(pts)
    n_cam = n_world @ pose.rotation.T
    # orient toward the camera
    flip = np.sum(n_cam * (rays_cam.reshape(-1, 3)), axis=1) > 0
    n_cam[flip] = -n_cam[flip]
    n_world_lit = np.where(flip[:, None], -n_world, n_world)

    lambert = np.maximum(0.0, -(n_world_lit @ LIGHT_DIR))
    shade = AMBIENT + (1.0 - AMBIENT) * lambert
    rgb = np.clip(_albedo(pts) * shade[:, None], 0.0, 1.0)
    rgb = np.where(hit[:, None], rgb, BACKGROUND)

    normals = np.where(hit[:, None], n_cam, 0.0).reshape(h, w, 3)
    return depth, normals, rgb.reshape(h, w, 3)


def make_scene(surface, rig: RigSpec, noise_sigma: float = 0.0, seed: int = 0) -> SyntheticScene:
    """Render a rig around the surface; optionally add multiplicative
    Gaussian depth noise (deterministic per seed and view)."""
    if noise_sigma < 0:
        raise ConfigError("noise sigma must be nonnegative")
    k = intrinsics_from_fov(
        math.radians(rig.fov_deg), math.radians(rig.fov_deg), rig.width, rig.height
    )
    poses = rig_poses(rig)
    if isinstance(surface, SphereSurface):
        for pose in poses:
            if np.linalg.norm(pose.center() - surface.center) <= surface.radius:
                raise ConfigError("degenerate rig: camera inside the sphere")
    views, gt_depths, gt_normals = [], [], []
    for i, pose in enumerate(poses):
        depth, normals, rgb = render_view(surface, k, pose)
        hit = depth > 0
        # ray-cast self check: surface equation satisfied at every valid pixel
        if np.any(hit):
            pts = _pixel_points(depth, k, pose)
            err = np.abs(surface.sdf(pts[hit.ravel()]))
            if err.size and float(np.max(err)) > RAYCAST_TOL:
                raise AssertionError(f"ray cast violates surface equation: {np.max(err):.3e}")
        noisy = depth
        if noise_sigma > 0:
            rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
            factor = 1.0 + noise_sigma * rng.standard_normal(depth.shape)
            noisy = np.where(hit, np.maximum(depth * factor, 1e-9), 0.0)
        mask = hit
        views.append(View(
            id=i, intrinsics=k, pose=pose,
            image=ImageBuffer(rgb), depth=DepthMap(noisy),
        ))
        gt_depths.append(DepthMap(depth))
        gt_normals.append(NormalMap(np.where(mask[:, :, None], normals, 0.0), mask))
    return SyntheticScene(
        surface=surface, views=views, gt_depths=gt_depths, gt_normals=gt_normals,
        noise_sigma=noise_sigma, seed=seed,
    )


def _pixel_points(depth: np.ndarray, k: CameraIntrinsics, pose: CameraPose) -> np.ndarray:
    h, w = depth.shape
    u = (np.arange(w) - k.cx) / k.fx
    v = (np.arange(h) - k.cy) / k.fy
    p = np.empty((h, w, 3))
    p[:, :, 0] = depth * u[None, :]
    p[:, :, 1] = depth * v[:, None]
    p[:, :, 2] = depth
    return pose.to_world(p.reshape(-1, 3))


# ---------------------------------------------------------------------------
# Metrics

def sample_mesh_surface(mesh: TriangleMesh, count: int, rng) -> np.ndarray:
    v = mesh.vertices
    t = mesh.triangles
    a = v[t[:, 0]]
    ab = v[t[:, 1]] - a
    ac = v[t[:, 2]] - a
    areas = 0.5 * np.linalg.norm(np.cross(ab, ac), axis=1)
    total = areas.sum()
    if total <= 0:
        raise DomainError("mesh has no area to sample")
    idx = rng.choice(len(t), size=count, p=areas / total)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    return a[idx] + (r1 * (1 - r2))[:, None] * ab[idx] + (r1 * r2)[:, None] * ac[idx]


def _point_triangle_distance(p, a, b, c):
    """Exact distance from point p to triangles (a, b, c); vectorized over rows."""
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.sum(ab * ap, axis=1)
    d2 = np.sum(ac * ap, axis=1)
    d3 = np.sum(ab * (p - b), axis=1)
    d4 = np.sum(ac * (p - b), axis=1)
    d5 = np.sum(ab * (p - c), axis=1)
    d6 = np.sum(ac * (p - c), axis=1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    denom = va + vb + vc
    eps = 1e-300
    w = np.stack([va, vb, vc], axis=1) / np.where(np.abs(denom) < eps, 1.0, denom)[:, None]
    inside = (w >= 0).all(axis=1) & (np.abs(denom) >= eps)
    closest = w[:, 0:1] * a + w[:, 1:2] * b + w[:, 2:3] * c

    def seg(p, s0, s1):
        d = s1 - s0
        t = np.sum((p - s0) * d, axis=1) / np.maximum(np.sum(d * d, axis=1), eps)
        t = np.clip(t, 0.0, 1.0)
        return s0 + t[:, None] * d

    cand = np.stack([seg(p, a, b), seg(p, b, c), seg(p, c, a)], axis=0)
    dists = np.linalg.norm(cand - p[None], axis=2)
    best = cand[np.argmin(dists, axis=0), np.arange(len(p))]
    closest = np.where(inside[:, None], closest, best)
    return np.linalg.norm(closest - p, axis=1)


def point_to_mesh_distance(points: np.ndarray, mesh: TriangleMesh) -> np.ndarray:
    """Distance from each point to the nearest mesh triangle (KD-tree pruned)."""
    v = mesh.vertices
    t = mesh.triangles
    if len(t) == 0:
        raise DomainError("empty mesh")
    centroids = v[t].mean(axis=1)
    radius = np.max(np.linalg.norm(v[t] - centroids[:, None, :], axis=2))
    tree = cKDTree(centroids)
    d_cent, _ = tree.query(points)
    out = np.empty(len(points))
    for i, p in enumerate(points):
        cand = tree.query_ball_point(p, d_cent[i] + 2.0 * radius + 1e-12)
        tri = t[cand]
        d = _point_triangle_distance(
            np.broadcast_to(p, (len(cand), 3)), v[tri[:, 0]], v[tri[:, 1]], v[tri[:, 2]]
        )
        out[i] = d.min()
    return out


def sample_analytic_surface(surface, mesh: TriangleMesh, count: int, rng) -> np.ndarray:
    if isinstance(surface, SphereSurface):
        d = rng.standard_normal((count, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return surface.center + surface.radius * d
    if isinstance(surface, PlaneSurface):
        # sample the plane patch spanned by the mesh footprint
        n = surface.normal
        t1 = np.cross(n, [1.0, 0.0, 0.0])
        if np.linalg.norm(t1) < 1e-8:
            t1 = np.cross(n, [0.0, 1.0, 0.0])
        t1 /= np.linalg.norm(t1)
        t2 = np.cross(n, t1)
        rel = mesh.vertices - surface.point
        u = rel @ t1
        w = rel @ t2
        su = rng.uniform(u.min(), u.max(), count)
        sw = rng.uniform(w.min(), w.max(), count)
        return surface.point + su[:, None] * t1 + sw[:, None] * t2
    raise ConfigError(f"cannot sample surface {type(surface).__name__}")


def chamfer_distance(mesh: TriangleMesh, scene, samples: int = 10000, seed: int = 0) -> float:
    """Symmetric chamfer between a mesh and the scene's analytic surface."""
    if len(mesh.triangles) == 0:
        raise DomainError("chamfer distance of an empty mesh")
    surface = scene.surface if isinstance(scene, SyntheticScene) else scene
    rng = np.random.default_rng(seed)
    on_mesh = sample_mesh_surface(mesh, samples, rng)
    a = float(np.mean(np.abs(surface.sdf(on_mesh))))
    on_surf = sample_analytic_surface(surface, mesh, samples, rng)
    b = float(np.mean(point_to_mesh_distance(on_surf, mesh)))
    return 0.5 * (a + b)


@dataclass(frozen=True)
class AngularError:
    mean_deg: float
    median_deg: float
    count: int


def angular_error(est: NormalMap, gt: NormalMap) -> AngularError:
    if est.values.shape != gt.values.shape:
        raise DomainError("normal maps must be co-registered")
    both = est.mask & gt.mask
    if not np.any(both):
        return AngularError(float("nan"), float("nan"), 0)
    dots = np.clip(np.sum(est.values[both] * gt.values[both], axis=1), -1.0, 1.0)
    ang = np.degrees(np.arccos(dots))
    return AngularError(float(np.mean(ang)), float(np.median(ang)), int(both.sum()))


# ---------------------------------------------------------------------------
# Brute-force oracles (test references; deliberately plain loops)

def _reflect(i: int, n: int) -> int:
    if i < 0:
        return -i
    if i >= n:
        return 2 * n - 2 - i
    return i


def oracle_bilateral(depth, lum, sigma_s, sigma_r):
    """Double-loop 3x3 joint bilateral filter with reflect-101 borders."""
    h, w = depth.shape
    out = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            if depth[r, c] <= 0:
                continue
            num = 0.0
            den = 0.0
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    rr = _reflect(r + dr, h)
                    cc = _reflect(c + dc, w)
                    if depth[rr, cc] <= 0:
                        continue
                    ws = math.exp(-(dr * dr + dc * dc) / (2.0 * sigma_s * sigma_s))
                    dl = lum[rr, cc] - lum[r, c]
                    wr = math.exp(-(dl * dl) / (2.0 * sigma_r * sigma_r))
                    num += ws * wr * depth[rr, cc]
                    den += ws * wr
            out[r, c] = num / den
    return out


def oracle_refine_depth(depth, lum, normals, k: CameraIntrinsics, alpha, normalize=True):
    """Per-pixel reference of the 8-neighbor depth transport average."""
    h, w = depth.shape
    out = np.zeros((h, w))
    neighbors = [(0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1)]
    for r in range(h):
        for c in range(w):
            if depth[r, c] <= 0:
                continue
            n = normals[r, c]
            eta = n[0] * (c - k.cx) / k.fx + n[1] * (r - k.cy) / k.fy + n[2]
            if abs(eta) < 1e-8:
                out[r, c] = depth[r, c]
                continue
            num = 0.0
            den = 0.0
            for dv, du in neighbors:
                rr = _reflect(r + dv, h)
                cc = _reflect(c + du, w)
                if depth[rr, cc] <= 0:
                    continue
                # rays are those of the padded image, which coincide with the
                # original rays at reflected coordinates expressed unpadded
                gamma = (
                    n[0] * (c + du - k.cx) / k.fx + n[1] * (r + dv - k.cy) / k.fy + n[2]
                )
                if abs(gamma) < 1e-8:
                    continue
                wgt = math.exp(-alpha * abs(lum[rr, cc] - lum[r, c]))
                num += wgt * depth[rr, cc] * gamma / eta
                den += wgt
            if den > 0:
                out[r, c] = num / den if normalize else num / 8.0
            else:
                out[r, c] = depth[r, c]
    return out


def oracle_kde_grid(samples, grid, bandwidth):
    """Direct-summation reference of the binned Gaussian KDE.

    Linear binning, explicit convolution over grid offsets, trapezoid
    normalization: the same estimate kde_fft computes via FFT.
    """
    g = len(grid)
    lo = grid[0]
    delta = grid[1] - grid[0]
    hist = [0.0] * g
    for x in samples:
        f = (x - lo) / delta
        i = int(math.floor(f))
        frac = f - i
        if 0 <= i < g:
            hist[i] += 1.0 - frac
        if 0 <= i + 1 < g:
            hist[i + 1] += frac
    dens = np.zeros(g)
    for out_i in range(g):
        offs = np.arange(g) - out_i
        kern = np.exp(-0.5 * (offs * delta / bandwidth) ** 2)
        dens[out_i] = float(np.dot(hist, kern))
    total = 0.0
    for i in range(g - 1):
        total += 0.5 * (dens[i] + dens[i + 1]) * delta
    return dens / total


def oracle_kde_exact(samples, grid, bandwidth):
    """Unbinned per-sample Gaussian KDE evaluated on the grid."""
    dens = np.zeros(len(grid))
    for i, x in enumerate(grid):
        acc = 0.0
        for s in samples:
            t = (x - s) / bandwidth
            acc += math.exp(-0.5 * t * t)
        dens[i] = acc / (len(samples) * bandwidth * math.sqrt(2.0 * math.pi))
    return dens


def oracle_cumtrapz(y, x):
    out = np.zeros(len(y))
    for i in range(1, len(y)):
        out[i] = out[i - 1] + 0.5 * (y[i] + y[i - 1]) * (x[i] - x[i - 1])
    return out


def oracle_knn_mean_dist(points, k):
    """O(N^2) mean distance to the k nearest neighbors."""
    n = len(points)
    out = np.zeros(n)
    for i in range(n):
        d = np.linalg.norm(points - points[i], axis=1)
        d[i] = np.inf
        out[i] = float(np.mean(np.sort(d)[:k]))
    return out


def oracle_rodrigues(axis, angle):
    """Rotation matrix exp(angle [axis]_x) via the explicit Rodrigues formula."""
    kx, ky, kz = axis
    kmat = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return np.eye(3) + math.sin(angle) * kmat + (1.0 - math.cos(angle)) * (kmat @ kmat)


def oracle_scharr_nms(lum):
    """Loop-based Scharr magnitude + non-maximum suppression."""
    h, w = lum.shape
    kx = [[-3.0, 0.0, 3.0], [-10.0, 0.0, 10.0], [-3.0, 0.0, 3.0]]
    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            sx = sy = 0.0
            for i in range(3):
                for j in range(3):
                    val = lum[_reflect(r + i - 1, h), _reflect(c + j - 1, w)]
                    sx += kx[i][j] * val
                    sy += kx[j][i] * val
            gx[r, c] = sx
            gy[r, c] = sy
    mag = np.hypot(gx, gy)
    offsets = {0: (0, 1), 1: (1, 1), 2: (1, 0), 3: (1, -1)}
    out = np.zeros((h, w))
    for r in range(h):
        for c in range(w):
            theta = math.atan2(gy[r, c], gx[r, c]) % math.pi
            sector = int((theta + math.pi / 8.0) // (math.pi / 4.0)) % 4
            dv, du = offsets[sector]
            ahead = mag[_reflect(r + dv, h), _reflect(c + du, w)]
            behind = mag[_reflect(r - dv, h), _reflect(c - du, w)]
            if mag[r, c] >= ahead and mag[r, c] >= behind:
                out[r, c] = mag[r, c]
    return out


def oracle_edge_metric(depth, depth_avg, lum):
    edges = oracle_scharr_nms(lum)
    h, w = depth.shape
    total = 0.0
    count = 0
    for r in range(h):
        for c in range(w):
            if depth[r, c] <= 0 or depth_avg[r, c] <= 0:
                continue
            ex = abs(edges[r, min(c + 1, w - 1)] - edges[r, c])
            ey = abs(edges[min(r + 1, h - 1), c] - edges[r, c])
            term = math.log1p(abs(depth[r, c] - depth_avg[r, c]))
            total += math.exp(-ex) * term + math.exp(-ey) * term
            count += 1
    return total / count if count else 0.0
