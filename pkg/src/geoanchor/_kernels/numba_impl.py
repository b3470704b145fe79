"""numba-compiled kernels. Same contracts as ``numpy_impl``."""
from __future__ import annotations

import numpy as np
from numba import njit

_MAXV = 32  # a quad clipped by six planes has at most 10 vertices


@njit(cache=True)
def _clip(src, m, nx, ny, nz, d, tol, dst):
    # distances within tol of the plane snap to zero so coplanar vertices stay put
    if m == 0:
        return 0
    k = 0
    for i in range(m):
        j = i + 1 if i + 1 < m else 0
        di = src[i, 0] * nx + src[i, 1] * ny + src[i, 2] * nz - d
        dj = src[j, 0] * nx + src[j, 1] * ny + src[j, 2] * nz - d
        if abs(di) <= tol:
            di = 0.0
        if abs(dj) <= tol:
            dj = 0.0
        ii = di <= 0.0
        ij = dj <= 0.0
        if ii:
            dst[k, 0] = src[i, 0]
            dst[k, 1] = src[i, 1]
            dst[k, 2] = src[i, 2]
            k += 1
        if ii != ij:
            t = di / (di - dj)
            dst[k, 0] = src[i, 0] + t * (src[j, 0] - src[i, 0])
            dst[k, 1] = src[i, 1] + t * (src[j, 1] - src[i, 1])
            dst[k, 2] = src[i, 2] + t * (src[j, 2] - src[i, 2])
            k += 1
    return k


@njit(cache=True)
def intersection_volume(corners_a, normals_a, offsets_a, corners_b, normals_b, offsets_b, faces, tol):
    buf0 = np.empty((_MAXV, 3))
    buf1 = np.empty((_MAXV, 3))
    vol = 0.0
    for side in range(2):
        if side == 0:
            P, PN, PD, QN, QD = corners_a, normals_a, offsets_a, normals_b, offsets_b
        else:
            P, PN, PD, QN, QD = corners_b, normals_b, offsets_b, normals_a, offsets_a
        for f in range(6):
            nx, ny, nz = PN[f, 0], PN[f, 1], PN[f, 2]
            d = PD[f]
            if side == 1:
                skip = False
                # already counted as a's face when it lies on a same-facing plane of a
                for k in range(6):
                    dot = normals_a[k, 0] * nx + normals_a[k, 1] * ny + normals_a[k, 2] * nz
                    if dot <= 0.0:
                        continue
                    on_plane = True
                    for c in range(4):
                        q = faces[f, c]
                        dist = P[q, 0] * normals_a[k, 0] + P[q, 1] * normals_a[k, 1] + P[q, 2] * normals_a[k, 2]
                        if abs(dist - offsets_a[k]) > tol:
                            on_plane = False
                    if on_plane:
                        skip = True
                if skip:
                    continue
            for c in range(4):
                buf0[c, 0] = P[faces[f, c], 0]
                buf0[c, 1] = P[faces[f, c], 1]
                buf0[c, 2] = P[faces[f, c], 2]
            m = 4
            src, dst = buf0, buf1
            for k in range(6):
                m = _clip(src, m, QN[k, 0], QN[k, 1], QN[k, 2], QD[k], tol, dst)
                src, dst = dst, src
                if m < 3:
                    break
            if m < 3:
                continue
            ax = 0.0
            ay = 0.0
            az = 0.0
            for i in range(m):
                j = i + 1 if i + 1 < m else 0
                ax += src[i, 1] * src[j, 2] - src[i, 2] * src[j, 1]
                ay += src[i, 2] * src[j, 0] - src[i, 0] * src[j, 2]
                az += src[i, 0] * src[j, 1] - src[i, 1] * src[j, 0]
            area = 0.5 * abs(ax * nx + ay * ny + az * nz)
            vol += d * area
    return max(vol / 3.0, 0.0)


@njit(cache=True)
def count_inside(points, center_a, rot_a, half_a, center_b, rot_b, half_b):
    both = 0
    either = 0
    for i in range(points.shape[0]):
        ia = True
        ib = True
        for ax in range(3):
            la = 0.0
            lb = 0.0
            for r in range(3):
                la += (points[i, r] - center_a[r]) * rot_a[r, ax]
                lb += (points[i, r] - center_b[r]) * rot_b[r, ax]
            if abs(la) > half_a[ax]:
                ia = False
            if abs(lb) > half_b[ax]:
                ib = False
        if ia and ib:
            both += 1
        if ia or ib:
            either += 1
    return both, either
