"""Closed, outward-oriented primitive meshes centered at the origin."""
from __future__ import annotations

import numpy as np

from .mesh import Mesh, MeshError

_ICO_COUNTS = [12 + 10 * (4**k - 1) for k in range(6)]  # 12, 42, 162, 642, ...


def icosphere(radius: float, subdivisions: int = 2) -> Mesh:
    """Subdivided icosahedron projected onto a sphere; 10 * 4**k + 2 vertices."""
    if radius <= 0:
        raise MeshError("radius must be positive")
    phi = (1.0 + 5.0**0.5) / 2.0
    verts = [(-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
             (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
             (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    v = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in cache:
                m = v[i] + v[j]
                v.append(m / np.linalg.norm(m))
                cache[key] = len(v) - 1
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return Mesh(np.array(v) * radius, np.array(faces))


def icosphere_for_count(radius: float, n_vertices: int) -> Mesh:
    """Icosphere with the smallest subdivision level reaching `n_vertices`."""
    for k, count in enumerate(_ICO_COUNTS):
        if count >= n_vertices:
            return icosphere(radius, k)
    return icosphere(radius, len(_ICO_COUNTS) - 1)


def box(size_x: float, size_y: float, size_z: float, divisions: int = 4) -> Mesh:
    """Axis-aligned box with every face split into a divisions x divisions grid."""
    if min(size_x, size_y, size_z) <= 0:
        raise MeshError("box sides must be positive")
    if divisions < 1:
        raise MeshError("divisions must be >= 1")
    n = divisions
    index: dict[tuple[int, int, int], int] = {}
    verts: list[tuple[int, int, int]] = []

    def vid(g):
        if g not in index:
            index[g] = len(verts)
            verts.append(g)
        return index[g]

    faces = []
    for axis in range(3):
        u_ax, v_ax = (axis + 1) % 3, (axis + 2) % 3
        for side in (0, n):
            for i in range(n):
                for j in range(n):
                    quad = []
                    for du, dv in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        g = [0, 0, 0]
                        g[axis], g[u_ax], g[v_ax] = side, i + du, j + dv
                        quad.append(vid(tuple(g)))
                    if side == 0:
                        quad = quad[::-1]
                    a, b, c, d = quad
                    faces += [(a, b, c), (a, c, d)]
    grid = np.array(verts, dtype=np.float64) / n - 0.5
    return Mesh(grid * np.array([size_x, size_y, size_z]), np.array(faces))


def cylinder(radius: float, height: float, segments: int = 16, rings: int = 6) -> Mesh:
    """Capped cylinder along z; `rings` vertex rings on the side wall plus two cap centers."""
    if radius <= 0 or height <= 0:
        raise MeshError("cylinder radius and height must be positive")
    if segments < 3 or rings < 2:
        raise MeshError("cylinder needs >= 3 segments and >= 2 rings")
    theta = 2.0 * np.pi * np.arange(segments) / segments
    zs = np.linspace(-height / 2, height / 2, rings)
    ring_xy = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
    verts = [np.column_stack([ring_xy, np.full(segments, z)]) for z in zs]
    verts.append([[0.0, 0.0, -height / 2], [0.0, 0.0, height / 2]])
    v = np.concatenate(verts)
    bottom, top = len(v) - 2, len(v) - 1
    faces = []
    for r in range(rings - 1):
        for s in range(segments):
            a = r * segments + s
            b = r * segments + (s + 1) % segments
            faces += [(a, b, b + segments), (a, b + segments, a + segments)]
    last = (rings - 1) * segments
    for s in range(segments):
        t = (s + 1) % segments
        faces.append((bottom, t, s))
        faces.append((top, last + s, last + t))
    return Mesh(v, np.array(faces))


def capsule_grid(radius: float, length: float, segments: int, cap_rings: int):
    """Capsule around the +z axis from z=0 to z=length.

    Returns (vertices, faces, rings) where rings[k] lists the vertex indices of
    the k-th latitude ring from the base; rings[cap_rings - 1] is the base
    equator and rings[cap_rings] the tip equator.
    """
    theta = 2.0 * np.pi * np.arange(segments) / segments
    circle = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    # latitudes: base hemisphere from pole side to equator, then tip hemisphere
    lat = np.linspace(0.0, np.pi / 2, cap_rings + 1)[1:]  # excludes the pole
    ring_specs = [(-np.cos(a), np.sin(a), 0.0) for a in lat]
    ring_specs += [(np.cos(a), np.sin(a), length) for a in lat[::-1]]
    verts = [np.array([[0.0, 0.0, -radius]])]
    rings = []
    for dz, rr, z0 in ring_specs:
        start = sum(len(x) for x in verts)
        verts.append(np.column_stack([radius * rr * circle, np.full(segments, z0 + radius * dz)]))
        rings.append(np.arange(start, start + segments))
    verts.append(np.array([[0.0, 0.0, length + radius]]))
    v = np.concatenate(verts)
    base_pole, tip_pole = 0, len(v) - 1
    faces = []
    for s in range(segments):
        t = (s + 1) % segments
        faces.append((base_pole, rings[0][t], rings[0][s]))
    for r in range(len(rings) - 1):
        lo, hi = rings[r], rings[r + 1]
        for s in range(segments):
            t = (s + 1) % segments
            faces += [(lo[s], lo[t], hi[t]), (lo[s], hi[t], hi[s])]
    for s in range(segments):
        t = (s + 1) % segments
        faces.append((tip_pole, rings[-1][s], rings[-1][t]))
    return v, np.array(faces), rings


def uv_ellipsoid(semi_axes, segments: int = 16, rings: int = 14):
    """UV ellipsoid along +y with poles on the y axis.

    Returns (vertices, faces, ring_index_lists); ring 0 is nearest the -y pole.
    """
    ax, ay, az = semi_axes
    theta = 2.0 * np.pi * np.arange(segments) / segments
    lat = np.linspace(-np.pi / 2, np.pi / 2, rings + 2)[1:-1]
    verts = [np.array([[0.0, -ay, 0.0]])]
    ring_ids = []
    for a in lat:
        start = sum(len(x) for x in verts)
        x = ax * np.cos(a) * np.cos(theta)
        z = az * np.cos(a) * np.sin(theta)
        verts.append(np.column_stack([x, np.full(segments, ay * np.sin(a)), z]))
        ring_ids.append(np.arange(start, start + segments))
    verts.append(np.array([[0.0, ay, 0.0]]))
    v = np.concatenate(verts)
    south, north = 0, len(v) - 1
    faces = []
    for s in range(segments):
        t = (s + 1) % segments
        faces.append((south, ring_ids[0][s], ring_ids[0][t]))
    for r in range(len(ring_ids) - 1):
        lo, hi = ring_ids[r], ring_ids[r + 1]
        for s in range(segments):
            t = (s + 1) % segments
            faces += [(lo[s], hi[s], hi[t]), (lo[s], hi[t], lo[t])]
    for s in range(segments):
        t = (s + 1) % segments
        faces.append((north, ring_ids[-1][t], ring_ids[-1][s]))
    return v, np.array(faces), ring_ids
