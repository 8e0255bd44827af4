"""Pure NumPy implementations of the hot per-pixel/per-voxel kernels.

These are the fallback for environments without the compiled extension
(`mvg._kernels._core`).  Both backends implement the same arithmetic in
the same per-element order, so results agree to within a few ulp (the
only divergence is libm vs SIMD `exp`).

All kernels take plain float64 arrays; the domain-type wrappers live in
the library modules.
"""

from __future__ import annotations

import numpy as np

from .._mc_tables import CORNER_OFFSETS, CORNER_PAIRS, EDGE_TABLE, TRI_TABLE

# 8-neighborhood in counterclockwise order (du right, dv down), wrapping.
NEIGHBORS_CCW = (
    (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1), (1, 0), (1, 1),
)


def bilateral_3x3(depth_p, lum_p, valid_p, spatial_w, inv_two_sr2):
    """Joint bilateral filter with a 3x3 window.

    Inputs are mirror-padded by one pixel; `spatial_w` holds the nine
    spatial Gaussian weights in row-major window order.  Invalid
    neighbors are excluded; invalid centers stay invalid (0 output).
    """
    h, w = depth_p.shape[0] - 2, depth_p.shape[1] - 2
    lum_c = lum_p[1 : 1 + h, 1 : 1 + w]
    num = np.zeros((h, w))
    den = np.zeros((h, w))
    i = 0
    for dv in (-1, 0, 1):
        for du in (-1, 0, 1):
            d_n = depth_p[1 + dv : 1 + dv + h, 1 + du : 1 + du + w]
            l_n = lum_p[1 + dv : 1 + dv + h, 1 + du : 1 + du + w]
            v_n = valid_p[1 + dv : 1 + dv + h, 1 + du : 1 + du + w]
            diff = l_n - lum_c
            wgt = spatial_w[i] * np.exp(-(diff * diff) * inv_two_sr2)
            wgt = np.where(v_n, wgt, 0.0)
            num += wgt * d_n
            den += wgt
            i += 1
    center_valid = valid_p[1 : 1 + h, 1 : 1 + w]
    ok = center_valid & (den > 0)
    out = np.zeros((h, w))
    np.divide(num, den, out=out, where=ok)
    return out


def normals_8n(points_p, valid_p, pad):
    """Normals from cross products over the 8-neighborhood.

    `points_p` is the (H+2p, W+2p, 3) camera-frame backprojection of the
    padded depth map.  A cross-product term is skipped when either of its
    two neighbors is invalid; the result is normalized and flipped to
    face the camera.  Returns (normals (H, W, 3), valid (H, W)).
    """
    hp, wp = valid_p.shape
    h, w = hp - 2 * pad, wp - 2 * pad
    sl = lambda dv, du: (slice(pad + dv, pad + dv + h), slice(pad + du, pad + du + w))
    pc = points_p[sl(0, 0)]
    acc = np.zeros((h, w, 3))
    for j in range(8):
        dv1, du1 = NEIGHBORS_CCW[j]
        dv2, du2 = NEIGHBORS_CCW[(j + 1) % 8]
        e1 = points_p[sl(dv1, du1)] - pc
        e2 = points_p[sl(dv2, du2)] - pc
        term_ok = valid_p[sl(dv1, du1)] & valid_p[sl(dv2, du2)]
        acc += np.where(term_ok[:, :, None], np.cross(e1, e2), 0.0)
    norm = np.linalg.norm(acc, axis=-1)
    valid = valid_p[sl(0, 0)] & (norm > 0)
    out = np.zeros((h, w, 3))
    np.divide(acc, norm[:, :, None], out=out, where=valid[:, :, None])
    # orient toward the camera: n . p <= 0 in camera frame
    flip = np.sum(out * pc, axis=-1) > 0
    out[flip] = -out[flip]
    return out, valid


def refine_avg(depth_p, lum_p, valid_p, normals, ray_x, ray_y, pad,
               alpha, gamma_eps, normalize):
    """Normal-guided weighted average over the 8-neighborhood.

    Each neighbor's depth is transported onto the center ray through the
    plane defined by the center's normal:

        d_pred = d_neighbor * (n . ray_neighbor) / (n . ray_center)

    and the predictions are averaged with image-gradient weights
    exp(-alpha * |dlum|).  `ray_x[u] = (u - cx)/fx` and `ray_y[v]` are
    the padded ray components.  Returns (depth (H, W), fallback_count).
    """
    hp, wp = depth_p.shape
    h, w = hp - 2 * pad, wp - 2 * pad
    sl = lambda dv, du: (slice(pad + dv, pad + dv + h), slice(pad + du, pad + du + w))
    nx, ny, nz = normals[:, :, 0], normals[:, :, 1], normals[:, :, 2]
    rx_c = ray_x[pad : pad + w][None, :]
    ry_c = ray_y[pad : pad + h][:, None]
    eta = nx * rx_c + ny * ry_c + nz
    eta_ok = np.abs(eta) >= gamma_eps
    eta_safe = np.where(eta_ok, eta, 1.0)
    lum_c = lum_p[sl(0, 0)]
    num = np.zeros((h, w))
    den = np.zeros((h, w))
    for dv, du in NEIGHBORS_CCW:
        rx_n = ray_x[pad + du : pad + du + w][None, :]
        ry_n = ray_y[pad + dv : pad + dv + h][:, None]
        gamma = nx * rx_n + ny * ry_n + nz
        ok = valid_p[sl(dv, du)] & (np.abs(gamma) >= gamma_eps) & eta_ok
        wgt = np.where(ok, np.exp(-alpha * np.abs(lum_p[sl(dv, du)] - lum_c)), 0.0)
        d_pred = depth_p[sl(dv, du)] * (gamma / eta_safe)
        num += wgt * d_pred
        den += wgt
    center_valid = valid_p[sl(0, 0)]
    refinable = center_valid & (den > 0)
    out = np.where(center_valid, depth_p[sl(0, 0)], 0.0)
    if normalize:
        np.divide(num, den, out=out, where=refinable)
    else:
        out[refinable] = num[refinable] / 8.0
    fallback = int(np.count_nonzero(center_valid & ~refinable))
    return out, fallback


def splat_signed(pos, nrm, sigma, origin, voxel, dims):
    """Normal-signed smoothed-indicator splatting.

    Accumulates, per grid corner within 3 sigma of a surfel,

        den += exp(-|c - p|^2 / (2 sigma^2))
        num += den_i * logistic(-4 (n . (c - p)) / sigma)

    so num/den is ~1 inside the surface, ~0 outside, and exactly 0.5 on
    it.  Returns (num, den) with shape `dims`.
    """
    nxg, nyg, nzg = dims
    num = np.zeros(dims)
    den = np.zeros(dims)
    for i in range(pos.shape[0]):
        p = pos[i]
        n = nrm[i]
        s = sigma[i]
        reach = 3.0 * s
        lo = np.maximum(np.ceil((p - reach - origin) / voxel), 0).astype(np.int64)
        hi = np.minimum(np.floor((p + reach - origin) / voxel), np.array(dims) - 1).astype(np.int64)
        if np.any(hi < lo):
            continue
        xs = origin[0] + voxel * np.arange(lo[0], hi[0] + 1) - p[0]
        ys = origin[1] + voxel * np.arange(lo[1], hi[1] + 1) - p[1]
        zs = origin[2] + voxel * np.arange(lo[2], hi[2] + 1) - p[2]
        dx = xs[:, None, None]
        dy = ys[None, :, None]
        dz = zs[None, None, :]
        r2 = dx * dx + dy * dy + dz * dz
        w = np.exp(r2 * (-0.5 / (s * s)))
        sd = n[0] * dx + n[1] * dy + n[2] * dz
        t = np.clip(4.0 * sd / s, -40.0, 40.0)
        g = 1.0 / (1.0 + np.exp(t))
        block = (slice(lo[0], hi[0] + 1), slice(lo[1], hi[1] + 1), slice(lo[2], hi[2] + 1))
        num[block] += w * g
        den[block] += w
    return num, den


def splat_density(pos, sigma, origin, voxel, dims):
    """Plain Gaussian density splatting; returns the accumulated field."""
    acc = np.zeros(dims)
    for i in range(pos.shape[0]):
        p = pos[i]
        s = sigma[i]
        reach = 3.0 * s
        lo = np.maximum(np.ceil((p - reach - origin) / voxel), 0).astype(np.int64)
        hi = np.minimum(np.floor((p + reach - origin) / voxel), np.array(dims) - 1).astype(np.int64)
        if np.any(hi < lo):
            continue
        dx = origin[0] + voxel * np.arange(lo[0], hi[0] + 1) - p[0]
        dy = origin[1] + voxel * np.arange(lo[1], hi[1] + 1) - p[1]
        dz = origin[2] + voxel * np.arange(lo[2], hi[2] + 1) - p[2]
        r2 = (dx * dx)[:, None, None] + (dy * dy)[None, :, None] + (dz * dz)[None, None, :]
        acc[lo[0] : hi[0] + 1, lo[1] : hi[1] + 1, lo[2] : hi[2] + 1] += np.exp(
            r2 * (-0.5 / (s * s))
        )
    return acc


_CORNER_OFF = np.array(CORNER_OFFSETS, dtype=np.int64)
_PAIRS = np.array(CORNER_PAIRS, dtype=np.int64)
_TRI_FLAT = []
_TRI_SPLIT = [0]
for _case in TRI_TABLE:
    _TRI_FLAT.extend(_case)
    _TRI_SPLIT.append(len(_TRI_FLAT))
_TRI_FLAT = np.array(_TRI_FLAT, dtype=np.int64)
_TRI_SPLIT = np.array(_TRI_SPLIT, dtype=np.int64)
_TRI_COUNT = np.array([len(t) // 3 for t in TRI_TABLE], dtype=np.int64)


def mc_core(field, iso, origin, voxel):
    """Marching cubes over a corner-sampled scalar field.

    Emits one flat (M, 3, 3) array of triangle vertices in world
    coordinates (no deduplication — welding happens downstream).
    Triangles are wound so their normals follow gradient ascent of the
    field.  Cells are visited in C order, matching the compiled kernel.
    """
    f = np.asarray(field)
    nx, ny, nz = f.shape
    if nx < 2 or ny < 2 or nz < 2:
        return np.zeros((0, 3, 3))
    inside = f < iso
    # case index per cell, corners in table order
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int32)
    for bit, (ox, oy, oz) in enumerate(CORNER_OFFSETS):
        case |= inside[ox : ox + nx - 1, oy : oy + ny - 1, oz : oz + nz - 1] << bit
    flat = case.reshape(-1)
    active = np.flatnonzero((flat != 0) & (flat != 255))
    if active.size == 0:
        return np.zeros((0, 3, 3))
    cases = flat[active]
    cyz = (ny - 1) * (nz - 1)
    cix = active // cyz
    ciy = (active % cyz) // (nz - 1)
    ciz = active % (nz - 1)
    cell = np.stack([cix, ciy, ciz], axis=1)  # (A, 3)

    # corner values and positions for active cells: (A, 8)
    corner_idx = cell[:, None, :] + _CORNER_OFF[None, :, :]
    vals = f[corner_idx[:, :, 0], corner_idx[:, :, 1], corner_idx[:, :, 2]]
    cpos = origin[None, None, :] + corner_idx * voxel

    # interpolated vertex on each of the 12 edges: (A, 12, 3)
    v1 = vals[:, _PAIRS[:, 0]]
    v2 = vals[:, _PAIRS[:, 1]]
    dv = v2 - v1
    t = np.where(dv != 0, (iso - v1) / np.where(dv != 0, dv, 1.0), 0.0)
    p1 = cpos[:, _PAIRS[:, 0], :]
    p2 = cpos[:, _PAIRS[:, 1], :]
    everts = p1 + t[:, :, None] * (p2 - p1)

    # expand per-cell triangle lists
    ntri = _TRI_COUNT[cases]
    total = int(ntri.sum())
    if total == 0:
        return np.zeros((0, 3, 3))
    cell_of_tri = np.repeat(np.arange(active.size), ntri)
    starts = _TRI_SPLIT[cases]
    offs = np.arange(total) - np.repeat(np.cumsum(ntri) - ntri, ntri)
    base = np.repeat(starts, ntri) + 3 * offs
    # table order winds toward descending values; swap to gradient ascent
    edge_ids = np.stack([_TRI_FLAT[base], _TRI_FLAT[base + 2], _TRI_FLAT[base + 1]], axis=1)
    tris = everts[cell_of_tri[:, None], edge_ids]
    return tris
