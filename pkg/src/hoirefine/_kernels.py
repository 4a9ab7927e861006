"""Compiled point/triangle-soup kernels behind mesh.py's queries."""
import math

import numpy as np
from numba import njit


@njit(cache=True)
def _closest_on_triangle(px, py, pz, t):
    ax, ay, az = t[0, 0], t[0, 1], t[0, 2]
    bx, by, bz = t[1, 0], t[1, 1], t[1, 2]
    cx, cy, cz = t[2, 0], t[2, 1], t[2, 2]
    abx, aby, abz = bx - ax, by - ay, bz - az
    acx, acy, acz = cx - ax, cy - ay, cz - az
    apx, apy, apz = px - ax, py - ay, pz - az
    d1 = abx * apx + aby * apy + abz * apz
    d2 = acx * apx + acy * apy + acz * apz
    if d1 <= 0.0 and d2 <= 0.0:
        return ax, ay, az
    bpx, bpy, bpz = px - bx, py - by, pz - bz
    d3 = abx * bpx + aby * bpy + abz * bpz
    d4 = acx * bpx + acy * bpy + acz * bpz
    if d3 >= 0.0 and d4 <= d3:
        return bx, by, bz
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        return ax + v * abx, ay + v * aby, az + v * abz
    cpx, cpy, cpz = px - cx, py - cy, pz - cz
    d5 = abx * cpx + aby * cpy + abz * cpz
    d6 = acx * cpx + acy * cpy + acz * cpz
    if d6 >= 0.0 and d5 <= d6:
        return cx, cy, cz
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        return ax + w * acx, ay + w * acy, az + w * acz
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return bx + w * (cx - bx), by + w * (cy - by), bz + w * (cz - bz)
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return ax + abx * v + acx * w, ay + aby * v + acy * w, az + abz * v + acz * w


@njit(cache=True)
def nearest_on_soup(points, tris):
    """Per point: distance, closest point and index of the nearest triangle
    (lowest index among exact ties)."""
    n = points.shape[0]
    dist = np.empty(n)
    closest = np.empty((n, 3))
    face = np.empty(n, dtype=np.int64)
    for i in range(n):
        px, py, pz = points[i, 0], points[i, 1], points[i, 2]
        best = np.inf
        bj = -1
        bx = by = bz = 0.0
        for j in range(tris.shape[0]):
            qx, qy, qz = _closest_on_triangle(px, py, pz, tris[j])
            d2 = (qx - px) ** 2 + (qy - py) ** 2 + (qz - pz) ** 2
            if d2 < best:
                best, bj = d2, j
                bx, by, bz = qx, qy, qz
        dist[i] = math.sqrt(best)
        closest[i, 0], closest[i, 1], closest[i, 2] = bx, by, bz
        face[i] = bj
    return dist, closest, face


@njit(cache=True)
def winding_soup(points, tris):
    """Generalized winding number of each point (signed solid angles / 4 pi)."""
    n = points.shape[0]
    out = np.empty(n)
    for i in range(n):
        px, py, pz = points[i, 0], points[i, 1], points[i, 2]
        total = 0.0
        for j in range(tris.shape[0]):
            ax, ay, az = tris[j, 0, 0] - px, tris[j, 0, 1] - py, tris[j, 0, 2] - pz
            bx, by, bz = tris[j, 1, 0] - px, tris[j, 1, 1] - py, tris[j, 1, 2] - pz
            cx, cy, cz = tris[j, 2, 0] - px, tris[j, 2, 1] - py, tris[j, 2, 2] - pz
            la = math.sqrt(ax * ax + ay * ay + az * az)
            lb = math.sqrt(bx * bx + by * by + bz * bz)
            lc = math.sqrt(cx * cx + cy * cy + cz * cz)
            det = ax * (by * cz - bz * cy) - ay * (bx * cz - bz * cx) + az * (bx * cy - by * cx)
            den = (la * lb * lc + (ax * bx + ay * by + az * bz) * lc
                   + (bx * cx + by * cy + bz * cz) * la + (cx * ax + cy * ay + cz * az) * lb)
            total += 2.0 * math.atan2(det, den)
        out[i] = total / (4.0 * math.pi)
    return out
