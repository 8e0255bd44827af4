"""Multi-view photometric and geometric consistency checks.

A reference pixel is unprojected, looked up in a source view, and
reprojected back through the source depth; the cycle must land close to
where it started (pixel tolerance) with nearly the same depth (relative
depth tolerance).  Pixels must collect enough source votes to pass.
Out-of-frame or invalid source lookups abstain rather than veto.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DomainError
from .quantile import DepthSegmentation
from .view import View


@dataclass(frozen=True)
class ConsistencyThresholds:
    pixel_tol: float = 1.0
    rel_depth_tol: float = 0.01
    min_views: int = 3

    def __post_init__(self):
        if self.pixel_tol <= 0 or self.rel_depth_tol <= 0:
            raise ConfigError("tolerances must be positive")
        if self.min_views < 1:
            raise ConfigError("min_views must be at least 1")


@dataclass(frozen=True)
class RegionThresholds:
    """Per-region tolerances; the mid region is checked more strictly."""

    near: ConsistencyThresholds = field(default_factory=ConsistencyThresholds)
    mid: ConsistencyThresholds = field(
        default_factory=lambda: ConsistencyThresholds(rel_depth_tol=0.001)
    )
    far: ConsistencyThresholds = field(default_factory=ConsistencyThresholds)

    def max_min_views(self) -> int:
        return max(self.near.min_views, self.mid.min_views, self.far.min_views)


def _cycle_arrays(ref: View, src: View, us, vs, ds, bilinear: bool):
    """Vectorized project-reproject cycle for pixel arrays of the ref view.

    Returns (u_back, v_back, d_back, hit); entries with hit=False are
    misses (behind a camera, out of frame, or invalid source depth).
    """
    kr, ks = ref.intrinsics, src.intrinsics
    # ref pixel -> world
    x = ds * (us - kr.cx) / kr.fx
    y = ds * (vs - kr.cy) / kr.fy
    p_world = ref.pose.to_world(np.stack([x, y, ds], axis=-1))
    # world -> src pixel
    q = src.pose.to_camera(p_world)
    zq = q[..., 2]
    hit = zq > 0
    zq_safe = np.where(hit, zq, 1.0)
    uq = ks.fx * q[..., 0] / zq_safe + ks.cx
    vq = ks.fy * q[..., 1] / zq_safe + ks.cy

    src_depth = src.depth.values
    if bilinear:
        hit &= (uq >= 0) & (uq <= ks.width - 1) & (vq >= 0) & (vq <= ks.height - 1)
        u0 = np.clip(np.floor(uq).astype(np.int64), 0, ks.width - 2)
        v0 = np.clip(np.floor(vq).astype(np.int64), 0, ks.height - 2)
        fu = uq - u0
        fv = vq - v0
        d00 = src_depth[v0, u0]
        d01 = src_depth[v0, u0 + 1]
        d10 = src_depth[v0 + 1, u0]
        d11 = src_depth[v0 + 1, u0 + 1]
        hit &= (d00 > 0) & (d01 > 0) & (d10 > 0) & (d11 > 0)
        d_s = (1 - fv) * ((1 - fu) * d00 + fu * d01) + fv * ((1 - fu) * d10 + fu * d11)
        ui, vi = uq, vq
    else:
        ui = np.rint(uq)
        vi = np.rint(vq)
        hit &= (ui >= 0) & (ui <= ks.width - 1) & (vi >= 0) & (vi <= ks.height - 1)
        iu = np.clip(ui.astype(np.int64), 0, ks.width - 1)
        iv = np.clip(vi.astype(np.int64), 0, ks.height - 1)
        d_s = src_depth[iv, iu]
        hit &= d_s > 0

    # src pixel + src depth -> world -> back into ref
    d_s_safe = np.where(hit, d_s, 1.0)
    xs = d_s_safe * (ui - ks.cx) / ks.fx
    ys = d_s_safe * (vi - ks.cy) / ks.fy
    p2_world = src.pose.to_world(np.stack([xs, ys, d_s_safe], axis=-1))
    p3 = ref.pose.to_camera(p2_world)
    z3 = p3[..., 2]
    hit &= z3 > 0
    z3_safe = np.where(hit, z3, 1.0)
    u3 = kr.fx * p3[..., 0] / z3_safe + kr.cx
    v3 = kr.fy * p3[..., 1] / z3_safe + kr.cy
    return u3, v3, z3, hit


def reproject_cycle(u: float, v: float, d: float, ref: View, src: View,
                    bilinear: bool = False):
    """Single-pixel cycle; returns ((u', v'), d') or None on a miss.

    The same-view cycle is the identity by construction, so it is
    returned exactly rather than routed through the arithmetic.
    """
    if d <= 0:
        raise DomainError(f"cycle needs positive depth, got {d}")
    if not (0 <= u <= ref.intrinsics.width - 1 and 0 <= v <= ref.intrinsics.height - 1):
        raise DomainError(f"pixel ({u}, {v}) outside the reference image")
    if src is ref or src.id == ref.id:
        return (u, v), d
    us = np.asarray([float(u)])
    vs = np.asarray([float(v)])
    ds = np.asarray([float(d)])
    u3, v3, d3, hit = _cycle_arrays(ref, src, us, vs, ds, bilinear)
    if not hit[0]:
        return None
    return (float(u3[0]), float(v3[0])), float(d3[0])


def select_source_views(views, ref: View, k: int = 4, max_angle_deg: float = 60.0,
                        min_count: int = 0):
    """The k nearest cameras by optical-center distance whose viewing
    directions stay within max_angle_deg of the reference's.

    When the angle gate leaves fewer than min_count candidates (wide
    surround rigs), it is dropped and the nearest k win, so callers that
    need a quorum of sources always get one if enough views exist.
    """
    axis_ref = ref.pose.view_axis()
    c_ref = ref.pose.center()
    cos_lim = np.cos(np.radians(max_angle_deg))
    scored = []
    for v in views:
        if v.id == ref.id:
            continue
        scored.append((float(np.linalg.norm(v.pose.center() - c_ref)), v.id, v))
    scored.sort(key=lambda s: (s[0], s[1]))
    narrow = [s for s in scored if float(axis_ref @ s[2].pose.view_axis()) >= cos_lim]
    if len(narrow) >= max(min_count, 1):
        scored = narrow
    return [v for _, _, v in scored[:k]]


def consistency_mask(ref: View, srcs, seg: DepthSegmentation, thr: RegionThresholds):
    """Per-pixel consistency vote over the source views.

    A pixel passes when at least its region's min_views sources produce a
    cycle within that region's pixel and relative-depth tolerances.
    Returns (pass_mask, votes) where votes counts agreeing sources.
    """
    srcs = list(srcs)
    need = thr.max_min_views()
    if len(srcs) < need:
        raise ConfigError(f"{len(srcs)} source views < min_views={need}")
    h, w = ref.depth.height, ref.depth.width
    valid = ref.depth.mask
    for name, region_mask in (("near", seg.near_mask), ("mid", seg.mid_mask),
                              ("far", seg.far_mask)):
        if region_mask.shape != (h, w):
            raise DomainError(f"segmentation {name} mask shape mismatch")

    tau_p = np.zeros((h, w))
    tau_d = np.zeros((h, w))
    min_v = np.full((h, w), np.iinfo(np.int32).max, dtype=np.int64)
    for region_mask, t in ((seg.near_mask, thr.near), (seg.mid_mask, thr.mid),
                           (seg.far_mask, thr.far)):
        tau_p[region_mask] = t.pixel_tol
        tau_d[region_mask] = t.rel_depth_tol
        min_v[region_mask] = t.min_views

    vv, uu = np.nonzero(valid)
    ds = ref.depth.values[vv, uu]
    votes_flat = np.zeros(ds.shape, dtype=np.int64)
    for src in srcs:
        u3, v3, d3, hit = _cycle_arrays(ref, src, uu.astype(np.float64),
                                        vv.astype(np.float64), ds, bilinear=False)
        pix_err = np.hypot(u3 - uu, v3 - vv)
        dep_err = np.abs(d3 - ds) / ds
        agree = hit & (pix_err < tau_p[vv, uu]) & (dep_err < tau_d[vv, uu])
        votes_flat += agree

    votes = np.zeros((h, w), dtype=np.int64)
    votes[vv, uu] = votes_flat
    passed = valid & (votes >= min_v)
    return passed, votes
