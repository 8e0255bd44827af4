# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled implementations of the hot kernels.

Semantics mirror `_python.py` exactly (same per-element arithmetic in the
same order); keep the two files in sync.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, exp, fabs, floor, sqrt

from .._mc_tables import CORNER_OFFSETS, CORNER_PAIRS, EDGE_TABLE, TRI_TABLE

cnp.import_array()

# 8-neighborhood in counterclockwise order, matching _python.NEIGHBORS_CCW
cdef int[8] NB_DV = [0, -1, -1, -1, 0, 1, 1, 1]
cdef int[8] NB_DU = [1, 1, 0, -1, -1, -1, 0, 1]

cdef int[256] _EDGE
cdef int[256][16] _TRI
cdef int[12][2] _PAIR
cdef int[8][3] _CORN

def _init_tables():
    cdef int i, j
    for i in range(256):
        _EDGE[i] = EDGE_TABLE[i]
        row = TRI_TABLE[i]
        for j in range(16):
            _TRI[i][j] = row[j] if j < len(row) else -1
    for i in range(12):
        _PAIR[i][0] = CORNER_PAIRS[i][0]
        _PAIR[i][1] = CORNER_PAIRS[i][1]
    for i in range(8):
        for j in range(3):
            _CORN[i][j] = CORNER_OFFSETS[i][j]

_init_tables()


def bilateral_3x3(depth_p, lum_p, valid_p, spatial_w, double inv_two_sr2):
    cdef double[:, ::1] d = np.ascontiguousarray(depth_p, dtype=np.float64)
    cdef double[:, ::1] l = np.ascontiguousarray(lum_p, dtype=np.float64)
    cdef unsigned char[:, ::1] m = np.ascontiguousarray(valid_p, dtype=np.uint8)
    cdef double[::1] sw = np.ascontiguousarray(spatial_w, dtype=np.float64)
    cdef Py_ssize_t h = d.shape[0] - 2, w = d.shape[1] - 2
    out_arr = np.zeros((h, w))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, c
    cdef int dv, du, i
    cdef double num, den, diff, wgt, lc
    for r in range(h):
        for c in range(w):
            if not m[r + 1, c + 1]:
                continue
            lc = l[r + 1, c + 1]
            num = 0.0
            den = 0.0
            i = 0
            for dv in range(-1, 2):
                for du in range(-1, 2):
                    if m[r + 1 + dv, c + 1 + du]:
                        diff = l[r + 1 + dv, c + 1 + du] - lc
                        wgt = sw[i] * exp(-(diff * diff) * inv_two_sr2)
                        num += wgt * d[r + 1 + dv, c + 1 + du]
                        den += wgt
                    i += 1
            if den > 0:
                out[r, c] = num / den
    return out_arr


def normals_8n(points_p, valid_p, Py_ssize_t pad):
    cdef double[:, :, ::1] p = np.ascontiguousarray(points_p, dtype=np.float64)
    cdef unsigned char[:, ::1] m = np.ascontiguousarray(valid_p, dtype=np.uint8)
    cdef Py_ssize_t h = m.shape[0] - 2 * pad, w = m.shape[1] - 2 * pad
    out_arr = np.zeros((h, w, 3))
    valid_arr = np.zeros((h, w), dtype=bool)
    cdef double[:, :, ::1] out = out_arr
    cdef unsigned char[:, ::1] vout = valid_arr.view(np.uint8)
    cdef Py_ssize_t r, c, rr, cc
    cdef int j, j2
    cdef double ax, ay, az, e1x, e1y, e1z, e2x, e2y, e2z, cx, cy, cz
    cdef double px, py, pz, norm
    for r in range(h):
        for c in range(w):
            rr = r + pad
            cc = c + pad
            if not m[rr, cc]:
                continue
            px = p[rr, cc, 0]
            py = p[rr, cc, 1]
            pz = p[rr, cc, 2]
            ax = 0.0
            ay = 0.0
            az = 0.0
            for j in range(8):
                j2 = (j + 1) & 7
                if not m[rr + NB_DV[j], cc + NB_DU[j]]:
                    continue
                if not m[rr + NB_DV[j2], cc + NB_DU[j2]]:
                    continue
                e1x = p[rr + NB_DV[j], cc + NB_DU[j], 0] - px
                e1y = p[rr + NB_DV[j], cc + NB_DU[j], 1] - py
                e1z = p[rr + NB_DV[j], cc + NB_DU[j], 2] - pz
                e2x = p[rr + NB_DV[j2], cc + NB_DU[j2], 0] - px
                e2y = p[rr + NB_DV[j2], cc + NB_DU[j2], 1] - py
                e2z = p[rr + NB_DV[j2], cc + NB_DU[j2], 2] - pz
                cx = e1y * e2z - e1z * e2y
                cy = e1z * e2x - e1x * e2z
                cz = e1x * e2y - e1y * e2x
                ax += cx
                ay += cy
                az += cz
            norm = sqrt(ax * ax + ay * ay + az * az)
            if norm > 0:
                ax /= norm
                ay /= norm
                az /= norm
                if ax * px + ay * py + az * pz > 0:
                    ax = -ax
                    ay = -ay
                    az = -az
                out[r, c, 0] = ax
                out[r, c, 1] = ay
                out[r, c, 2] = az
                vout[r, c] = 1
    return out_arr, valid_arr


def refine_avg(depth_p, lum_p, valid_p, normals, ray_x, ray_y, Py_ssize_t pad,
               double alpha, double gamma_eps, bint normalize):
    cdef double[:, ::1] d = np.ascontiguousarray(depth_p, dtype=np.float64)
    cdef double[:, ::1] l = np.ascontiguousarray(lum_p, dtype=np.float64)
    cdef unsigned char[:, ::1] m = np.ascontiguousarray(valid_p, dtype=np.uint8)
    cdef double[:, :, ::1] nrm = np.ascontiguousarray(normals, dtype=np.float64)
    cdef double[::1] rx = np.ascontiguousarray(ray_x, dtype=np.float64)
    cdef double[::1] ry = np.ascontiguousarray(ray_y, dtype=np.float64)
    cdef Py_ssize_t h = d.shape[0] - 2 * pad, w = d.shape[1] - 2 * pad
    out_arr = np.zeros((h, w))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t r, c, rr, cc
    cdef int j
    cdef long fallback = 0
    cdef double nx, ny, nz, eta, gamma, num, den, wgt, lc
    cdef bint eta_ok
    for r in range(h):
        for c in range(w):
            rr = r + pad
            cc = c + pad
            if not m[rr, cc]:
                continue
            nx = nrm[r, c, 0]
            ny = nrm[r, c, 1]
            nz = nrm[r, c, 2]
            eta = nx * rx[cc] + ny * ry[rr] + nz
            eta_ok = fabs(eta) >= gamma_eps
            if not eta_ok:
                eta = 1.0
            lc = l[rr, cc]
            num = 0.0
            den = 0.0
            for j in range(8):
                if not m[rr + NB_DV[j], cc + NB_DU[j]]:
                    continue
                gamma = nx * rx[cc + NB_DU[j]] + ny * ry[rr + NB_DV[j]] + nz
                if fabs(gamma) < gamma_eps or not eta_ok:
                    continue
                wgt = exp(-alpha * fabs(l[rr + NB_DV[j], cc + NB_DU[j]] - lc))
                num += wgt * (d[rr + NB_DV[j], cc + NB_DU[j]] * (gamma / eta))
                den += wgt
            if den > 0:
                out[r, c] = num / den if normalize else num / 8.0
            else:
                out[r, c] = d[rr, cc]
                fallback += 1
    return out_arr, fallback


def splat_signed(pos, nrm, sigma, origin, double voxel, dims):
    cdef double[:, ::1] p = np.ascontiguousarray(pos, dtype=np.float64)
    cdef double[:, ::1] n = np.ascontiguousarray(nrm, dtype=np.float64)
    cdef double[::1] sig = np.ascontiguousarray(sigma, dtype=np.float64)
    cdef double[::1] org = np.ascontiguousarray(origin, dtype=np.float64)
    cdef Py_ssize_t nx = dims[0], ny = dims[1], nz = dims[2]
    num_arr = np.zeros((nx, ny, nz))
    den_arr = np.zeros((nx, ny, nz))
    cdef double[:, :, ::1] num = num_arr
    cdef double[:, :, ::1] den = den_arr
    cdef Py_ssize_t i, ix, iy, iz
    cdef long lo0, lo1, lo2, hi0, hi1, hi2
    cdef double s, reach, inv2s2, dxv, dyv, dzv, r2, w, sd, t, g
    for i in range(p.shape[0]):
        s = sig[i]
        reach = 3.0 * s
        inv2s2 = -0.5 / (s * s)
        lo0 = <long>ceil((p[i, 0] - reach - org[0]) / voxel)
        lo1 = <long>ceil((p[i, 1] - reach - org[1]) / voxel)
        lo2 = <long>ceil((p[i, 2] - reach - org[2]) / voxel)
        hi0 = <long>floor((p[i, 0] + reach - org[0]) / voxel)
        hi1 = <long>floor((p[i, 1] + reach - org[1]) / voxel)
        hi2 = <long>floor((p[i, 2] + reach - org[2]) / voxel)
        if lo0 < 0: lo0 = 0
        if lo1 < 0: lo1 = 0
        if lo2 < 0: lo2 = 0
        if hi0 > nx - 1: hi0 = nx - 1
        if hi1 > ny - 1: hi1 = ny - 1
        if hi2 > nz - 1: hi2 = nz - 1
        for ix in range(lo0, hi0 + 1):
            dxv = org[0] + voxel * ix - p[i, 0]
            for iy in range(lo1, hi1 + 1):
                dyv = org[1] + voxel * iy - p[i, 1]
                for iz in range(lo2, hi2 + 1):
                    dzv = org[2] + voxel * iz - p[i, 2]
                    r2 = dxv * dxv + dyv * dyv + dzv * dzv
                    w = exp(r2 * inv2s2)
                    sd = n[i, 0] * dxv + n[i, 1] * dyv + n[i, 2] * dzv
                    t = 4.0 * sd / s
                    if t < -40.0: t = -40.0
                    elif t > 40.0: t = 40.0
                    g = 1.0 / (1.0 + exp(t))
                    num[ix, iy, iz] += w * g
                    den[ix, iy, iz] += w
    return num_arr, den_arr


def splat_density(pos, sigma, origin, double voxel, dims):
    cdef double[:, ::1] p = np.ascontiguousarray(pos, dtype=np.float64)
    cdef double[::1] sig = np.ascontiguousarray(sigma, dtype=np.float64)
    cdef double[::1] org = np.ascontiguousarray(origin, dtype=np.float64)
    cdef Py_ssize_t nx = dims[0], ny = dims[1], nz = dims[2]
    acc_arr = np.zeros((nx, ny, nz))
    cdef double[:, :, ::1] acc = acc_arr
    cdef Py_ssize_t i, ix, iy, iz
    cdef long lo0, lo1, lo2, hi0, hi1, hi2
    cdef double s, reach, inv2s2, dxv, dyv, dzv, r2
    for i in range(p.shape[0]):
        s = sig[i]
        reach = 3.0 * s
        inv2s2 = -0.5 / (s * s)
        lo0 = <long>ceil((p[i, 0] - reach - org[0]) / voxel)
        lo1 = <long>ceil((p[i, 1] - reach - org[1]) / voxel)
        lo2 = <long>ceil((p[i, 2] - reach - org[2]) / voxel)
        hi0 = <long>floor((p[i, 0] + reach - org[0]) / voxel)
        hi1 = <long>floor((p[i, 1] + reach - org[1]) / voxel)
        hi2 = <long>floor((p[i, 2] + reach - org[2]) / voxel)
        if lo0 < 0: lo0 = 0
        if lo1 < 0: lo1 = 0
        if lo2 < 0: lo2 = 0
        if hi0 > nx - 1: hi0 = nx - 1
        if hi1 > ny - 1: hi1 = ny - 1
        if hi2 > nz - 1: hi2 = nz - 1
        for ix in range(lo0, hi0 + 1):
            dxv = org[0] + voxel * ix - p[i, 0]
            for iy in range(lo1, hi1 + 1):
                dyv = org[1] + voxel * iy - p[i, 1]
                for iz in range(lo2, hi2 + 1):
                    dzv = org[2] + voxel * iz - p[i, 2]
                    r2 = dxv * dxv + dyv * dyv + dzv * dzv
                    acc[ix, iy, iz] += exp(r2 * inv2s2)
    return acc_arr


def mc_core(field, double iso, origin, double voxel):
    """Marching cubes; triangles wound toward gradient ascent, cells in C order."""
    f_arr = np.ascontiguousarray(field, dtype=np.float64)
    cdef double[:, :, ::1] f = f_arr
    cdef Py_ssize_t nx = f.shape[0], ny = f.shape[1], nz = f.shape[2]
    if nx < 2 or ny < 2 or nz < 2:
        return np.zeros((0, 3, 3))
    cdef double[::1] org = np.ascontiguousarray(origin, dtype=np.float64)
    cdef Py_ssize_t ix, iy, iz
    cdef int case, bit, j, e, a, c1, c2
    cdef long total = 0

    # first pass: count triangles
    for ix in range(nx - 1):
        for iy in range(ny - 1):
            for iz in range(nz - 1):
                case = 0
                for bit in range(8):
                    if f[ix + _CORN[bit][0], iy + _CORN[bit][1], iz + _CORN[bit][2]] < iso:
                        case |= 1 << bit
                if case == 0 or case == 255:
                    continue
                j = 0
                while _TRI[case][j] != -1:
                    j += 3
                total += j // 3

    out_arr = np.zeros((total, 3, 3))
    cdef double[:, :, ::1] out = out_arr
    cdef long w = 0
    cdef double v1, v2, dv, t
    cdef double[12][3] ev
    cdef bint[12] have
    cdef int[3] emit_order
    for ix in range(nx - 1):
        for iy in range(ny - 1):
            for iz in range(nz - 1):
                case = 0
                for bit in range(8):
                    if f[ix + _CORN[bit][0], iy + _CORN[bit][1], iz + _CORN[bit][2]] < iso:
                        case |= 1 << bit
                if case == 0 or case == 255:
                    continue
                for e in range(12):
                    have[e] = 0
                    if _EDGE[case] & (1 << e):
                        c1 = _PAIR[e][0]
                        c2 = _PAIR[e][1]
                        v1 = f[ix + _CORN[c1][0], iy + _CORN[c1][1], iz + _CORN[c1][2]]
                        v2 = f[ix + _CORN[c2][0], iy + _CORN[c2][1], iz + _CORN[c2][2]]
                        dv = v2 - v1
                        t = (iso - v1) / dv if dv != 0 else 0.0
                        # positions per axis, matching the fallback: origin + corner_idx * voxel
                        ev[e][0] = (org[0] + (ix + _CORN[c1][0]) * voxel) + t * (
                            (org[0] + (ix + _CORN[c2][0]) * voxel) - (org[0] + (ix + _CORN[c1][0]) * voxel))
                        ev[e][1] = (org[1] + (iy + _CORN[c1][1]) * voxel) + t * (
                            (org[1] + (iy + _CORN[c2][1]) * voxel) - (org[1] + (iy + _CORN[c1][1]) * voxel))
                        ev[e][2] = (org[2] + (iz + _CORN[c1][2]) * voxel) + t * (
                            (org[2] + (iz + _CORN[c2][2]) * voxel) - (org[2] + (iz + _CORN[c1][2]) * voxel))
                        have[e] = 1
                j = 0
                while _TRI[case][j] != -1:
                    # table winds toward descent; emit (0, 2, 1) for ascent
                    emit_order[0] = _TRI[case][j]
                    emit_order[1] = _TRI[case][j + 2]
                    emit_order[2] = _TRI[case][j + 1]
                    for a in range(3):
                        e = emit_order[a]
                        out[w, a, 0] = ev[e][0]
                        out[w, a, 1] = ev[e][1]
                        out[w, a, 2] = ev[e][2]
                    w += 1
                    j += 3
    return out_arr
