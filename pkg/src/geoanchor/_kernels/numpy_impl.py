"""Pure-numpy kernels. Same contracts as ``numba_impl``."""
from __future__ import annotations

import numpy as np


def _clip(poly: np.ndarray, n: np.ndarray, d: float, tol: float) -> np.ndarray:
    # keep n.x <= d; distances within tol snap to zero
    if len(poly) == 0:
        return poly
    dist = poly @ n - d
    dist[np.abs(dist) <= tol] = 0.0
    inside = dist <= 0.0
    if inside.all():
        return poly
    if not inside.any():
        return poly[:0]
    out = []
    m = len(poly)
    for i in range(m):
        j = (i + 1) % m
        if inside[i]:
            out.append(poly[i])
        if inside[i] != inside[j]:
            t = dist[i] / (dist[i] - dist[j])
            out.append(poly[i] + t * (poly[j] - poly[i]))
    return np.asarray(out)


def intersection_volume(corners_a, normals_a, offsets_a, corners_b, normals_b, offsets_b, faces, tol):
    vol = 0.0
    boxes = ((corners_a, normals_a, offsets_a), (corners_b, normals_b, offsets_b))
    for side in (0, 1):
        P, PN, PD = boxes[side]
        _, QN, QD = boxes[1 - side]
        for f in range(6):
            n = PN[f]
            d = PD[f]
            poly = P[faces[f]]
            if side == 1:
                # already counted as a's face when it lies on a same-facing plane of a
                on_plane = np.all(np.abs(poly @ normals_a.T - offsets_a) <= tol, axis=0)
                if np.any(on_plane & (normals_a @ n > 0.0)):
                    continue
            for k in range(6):
                poly = _clip(poly, QN[k], QD[k], tol)
                if len(poly) < 3:
                    break
            if len(poly) < 3:
                continue
            area_vec = 0.5 * np.cross(poly, np.roll(poly, -1, axis=0)).sum(axis=0)
            vol += d * abs(area_vec @ n)
    return max(vol / 3.0, 0.0)


def count_inside(points, center_a, rot_a, half_a, center_b, rot_b, half_b):
    in_a = np.all(np.abs((points - center_a) @ rot_a) <= half_a, axis=1)
    in_b = np.all(np.abs((points - center_b) @ rot_b) <= half_b, axis=1)
    return int(np.count_nonzero(in_a & in_b)), int(np.count_nonzero(in_a | in_b))
