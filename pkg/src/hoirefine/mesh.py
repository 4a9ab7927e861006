"""Indexed triangle meshes, OBJ I/O and point/mesh geometric queries.

Coordinates are millimeters throughout.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple

import numpy as np

from . import _kernels


class MeshError(ValueError):
    """Raised for meshes that violate the indexed-triangle invariants."""


class MeshFormatError(MeshError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NotWatertightError(MeshError):
    def __init__(self, edge: tuple[int, int], reason: str):
        self.edge = edge
        super().__init__(f"mesh is not closed/consistently oriented at edge {edge}: {reason}")


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64, copy=True).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64, copy=True).reshape(-1, 3)
        if not np.all(np.isfinite(v)):
            raise MeshError("vertex coordinates must be finite")
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                bad = int(np.nonzero((f < 0) | (f >= len(v)))[0][0])
                raise MeshError(f"face {bad} references a vertex outside [0, {len(v)})")
            degenerate = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if degenerate.any():
                raise MeshError(f"face {int(np.argmax(degenerate))} has repeated vertex indices")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices) -> "Mesh":
        """Same connectivity, new positions."""
        return Mesh(vertices, self.faces)

    def triangles(self) -> np.ndarray:
        """(m, 3, 3) array of face corner coordinates."""
        return self.vertices[self.faces]

    @cached_property
    def edges(self) -> np.ndarray:
        return vertex_adjacency(self)

    def signed_volume(self) -> float:
        """Enclosed volume by the divergence theorem (mm^3); negative if inward oriented."""
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)

    def check_watertight(self) -> None:
        """Raise NotWatertightError unless every edge is shared by exactly two
        faces that traverse it in opposite directions."""
        _ = self._watertight_ok

    @cached_property
    def _watertight_ok(self) -> bool:
        f = self.faces
        if len(f) == 0:
            raise NotWatertightError((-1, -1), "mesh has no faces")
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        uniq, counts = np.unique(directed, axis=0, return_counts=True)
        if (counts > 1).any():
            e = uniq[np.argmax(counts > 1)]
            raise NotWatertightError((int(e[0]), int(e[1])), "directed edge used by more than one face")
        n = len(self.vertices)
        keys = set((uniq[:, 0] * n + uniq[:, 1]).tolist())
        for i, j in uniq.tolist():
            if j * n + i not in keys:
                raise NotWatertightError((i, j), "edge has no oppositely wound partner face")
        return True

    @property
    def is_watertight(self) -> bool:
        try:
            self.check_watertight()
        except NotWatertightError:
            return False
        return True


def vertex_adjacency(mesh: Mesh) -> np.ndarray:
    """Unique undirected vertex pairs (i < j) appearing in any face, as a (k, 2) array.

    Each edge implicitly carries weight 1.
    """
    f = mesh.faces
    if len(f) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    pairs = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    pairs = np.sort(pairs, axis=1)
    return np.unique(pairs, axis=0)


# --------------------------------------------------------------------------- I/O


def load_mesh(path: str | os.PathLike) -> Mesh:
    """Read the `v`/`f` subset of Wavefront OBJ.

    Polygons with more than three corners are fan-triangulated from their
    first corner. Normals, texture coordinates and every other statement
    are ignored.
    """
    vertices: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    face_lines: list[int] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            if tokens[0] == "v":
                if len(tokens) < 4:
                    raise MeshFormatError("vertex needs three coordinates", lineno)
                try:
                    xyz = [float(t) for t in tokens[1:4]]
                except ValueError as exc:
                    raise MeshFormatError(f"bad vertex coordinate ({exc})", lineno) from None
                if not all(np.isfinite(xyz)):
                    raise MeshFormatError("non-finite vertex coordinate", lineno)
                vertices.append(xyz)
            elif tokens[0] == "f":
                if len(tokens) < 4:
                    raise MeshFormatError("face needs at least three vertices", lineno)
                try:
                    idx = [int(t.split("/")[0]) for t in tokens[1:]]
                except ValueError as exc:
                    raise MeshFormatError(f"bad face index ({exc})", lineno) from None
                if len(set(idx)) != len(idx):
                    raise MeshFormatError(f"degenerate face {idx} repeats a vertex", lineno)
                idx = [i - 1 for i in idx]
                for k in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[k], idx[k + 1]))
                    face_lines.append(lineno)
    n = len(vertices)
    for tri, lineno in zip(faces, face_lines):
        for i in tri:
            if i < 0 or i >= n:
                raise MeshFormatError(f"face index {i + 1} out of range 1..{n}", lineno)
    return Mesh(np.array(vertices, dtype=np.float64).reshape(-1, 3),
                np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_mesh(mesh: Mesh, path: str | os.PathLike) -> None:
    lines = [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces.tolist()]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------- point queries


def closest_point_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Closest point on triangle (a, b, c) to p, broadcasting over leading axes.

    Voronoi-region walk (Ericson, Real-Time Collision Detection, 5.1.5).
    """
    p, a, b, c = np.broadcast_arrays(p, a, b, c)
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = np.einsum("...i,...i->...", ab, ap)
    d2 = np.einsum("...i,...i->...", ac, ap)
    bp = p - b
    d3 = np.einsum("...i,...i->...", ab, bp)
    d4 = np.einsum("...i,...i->...", ac, bp)
    cp = p - c
    d5 = np.einsum("...i,...i->...", ab, cp)
    d6 = np.einsum("...i,...i->...", ac, cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v_in = vb / denom
        w_in = vc / denom
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))

    out = a + v_in[..., None] * ab + w_in[..., None] * ac
    # later assignments take priority, so go from the most generic region up
    m = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
    out = np.where(m[..., None], b + t_bc[..., None] * (c - b), out)
    m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    out = np.where(m[..., None], a + t_ac[..., None] * ac, out)
    m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    out = np.where(m[..., None], a + t_ab[..., None] * ab, out)
    out = np.where(((d6 >= 0) & (d5 <= d6))[..., None], c, out)
    out = np.where(((d3 >= 0) & (d4 <= d3))[..., None], b, out)
    out = np.where(((d1 <= 0) & (d2 <= 0))[..., None], a, out)
    return out


def winding_numbers(points: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Generalized winding number of each query point w.r.t. the mesh surface.

    Sum of signed solid angles (Van Oosterom & Strackee) over 4*pi; ~1 inside a
    closed outward-oriented surface, ~0 outside.
    """
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    return _kernels.winding_soup(points, np.ascontiguousarray(mesh.triangles()))


def inside(points: np.ndarray, mesh: Mesh) -> np.ndarray:
    return winding_numbers(points, mesh) > 0.5


class SignedDistanceResult(NamedTuple):
    distance: float
    closest_point: np.ndarray
    face_index: int


def _nearest_on_surface(points: np.ndarray, mesh: Mesh):
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    return _kernels.nearest_on_soup(points, np.ascontiguousarray(mesh.triangles()))


def signed_distances(points: np.ndarray, mesh: Mesh) -> np.ndarray:
    """Signed distance of many points (negative inside). Requires a watertight mesh."""
    mesh.check_watertight()
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    dist, _, _ = _nearest_on_surface(points, mesh)
    return np.where(inside(points, mesh), -dist, dist)


def signed_distance(point, mesh: Mesh) -> SignedDistanceResult:
    mesh.check_watertight()
    p = np.asarray(point, dtype=np.float64).reshape(1, 3)
    dist, closest, face = _nearest_on_surface(p, mesh)
    d = float(dist[0])
    if inside(p, mesh)[0]:
        d = -d
    return SignedDistanceResult(d, closest[0], int(face[0]))
