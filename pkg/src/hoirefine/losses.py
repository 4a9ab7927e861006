"""Refinement loss terms (squared mm) on top of the autodiff primitives.

Each term has a Tensor form used in training and a float convenience
wrapper taking meshes or point arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .mesh import Mesh, vertex_adjacency

LAMBDA_EDGE = 2.0
LAMBDA_LAPLACE = 0.1


@dataclass(frozen=True)
class LossBreakdown:
    l_v: float
    l_j: float
    l_cd: float
    l_e: float
    l_l: float

    @property
    def hand(self) -> float:
        return self.l_v + self.l_j

    @property
    def obj(self) -> float:
        return self.l_cd + LAMBDA_EDGE * self.l_e + LAMBDA_LAPLACE * self.l_l

    @property
    def total(self) -> float:
        return self.hand + self.obj


# ------------------------------------------------------------- tensor versions


def vertex_l2_t(pred, gt) -> Tensor:
    return ad.mean(ad.sqnorm_rows(ad.sub(pred, gt)))


def joint_l2_t(pred, gt, regressor: np.ndarray) -> Tensor:
    joints = ad.matmul(regressor, pred)
    return ad.mean(ad.sqnorm_rows(ad.sub(joints, regressor @ ad.as_tensor(gt).value)))


def chamfer_t(pred, gt) -> Tensor:
    d = ad.pairwise_sqdist(pred, gt)
    return ad.add(ad.mean(ad.min(d, axis=1)), ad.mean(ad.min(d, axis=0)))


def edge_regularizer_t(vertices, edges: np.ndarray) -> Tensor:
    """Variance of the lengths of the given (k, 2) vertex-index edges."""
    vertices = ad.as_tensor(vertices)
    diff = ad.sub(ad.index(vertices, edges[:, 0]), ad.index(vertices, edges[:, 1]))
    lengths = ad.sqrt(ad.sqnorm_rows(diff))
    centered = ad.sub(lengths, ad.mean(lengths))
    return ad.mean(ad.mul(centered, centered))


@dataclass(frozen=True)
class UniformLaplacian:
    """Neighbour-averaging operator of a mesh: out_i = mean of v_j over neighbours."""
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    n: int

    @classmethod
    def of(cls, mesh: Mesh) -> "UniformLaplacian":
        e = vertex_adjacency(mesh)
        src = np.concatenate([e[:, 1], e[:, 0]])
        dst = np.concatenate([e[:, 0], e[:, 1]])
        deg = np.bincount(dst, minlength=mesh.n_vertices).astype(np.float64)
        return cls(src, dst, 1.0 / deg[dst], mesh.n_vertices)


def laplacian_t(vertices, lap: UniformLaplacian) -> Tensor:
    vertices = ad.as_tensor(vertices)
    delta = ad.sub(vertices, ad.spmm(lap.src, lap.dst, lap.weight, vertices, lap.n))
    return ad.mean(ad.sqnorm_rows(delta))


@dataclass(frozen=True)
class LossTarget:
    """Everything a scene's refinement loss needs besides the prediction."""
    hand_gt: np.ndarray
    obj_points: np.ndarray
    regressor: np.ndarray
    obj_edges: np.ndarray
    obj_laplacian: UniformLaplacian

    @classmethod
    def build(cls, hand_gt: Mesh, obj_points: np.ndarray, regressor: np.ndarray, obj_topology: Mesh):
        return cls(np.asarray(hand_gt.vertices), np.asarray(obj_points, dtype=np.float64),
                   np.asarray(regressor, dtype=np.float64), vertex_adjacency(obj_topology),
                   UniformLaplacian.of(obj_topology))


def refine_loss_t(hand_pred, obj_pred, target: LossTarget) -> dict[str, Tensor]:
    """Loss terms and weighted total; the hand part carries no shape prior."""
    terms = {
        "l_v": vertex_l2_t(hand_pred, target.hand_gt),
        "l_j": joint_l2_t(hand_pred, target.hand_gt, target.regressor),
        "l_cd": chamfer_t(obj_pred, target.obj_points),
        "l_e": edge_regularizer_t(obj_pred, target.obj_edges),
        "l_l": laplacian_t(obj_pred, target.obj_laplacian),
    }
    terms["hand"] = ad.add(terms["l_v"], terms["l_j"])
    terms["obj"] = ad.add(terms["l_cd"], ad.add(ad.mul(terms["l_e"], LAMBDA_EDGE),
                                                 ad.mul(terms["l_l"], LAMBDA_LAPLACE)))
    terms["total"] = ad.add(terms["hand"], terms["obj"])
    return terms


def breakdown(terms: dict[str, Tensor]) -> LossBreakdown:
    return LossBreakdown(*(float(terms[k].value) for k in ("l_v", "l_j", "l_cd", "l_e", "l_l")))


# -------------------------------------------------------------- float wrappers


def _verts(m):
    return m.vertices if isinstance(m, Mesh) else np.asarray(m, dtype=np.float64)


def vertex_l2(pred, gt) -> float:
    """Mean squared distance between corresponding vertices (mm^2)."""
    p, g = _verts(pred), _verts(gt)
    if p.shape != g.shape:
        raise ValueError(f"vertex counts differ: {p.shape} vs {g.shape}")
    return float(vertex_l2_t(p, g).value)


def joint_l2(pred, gt, regressor) -> float:
    return float(joint_l2_t(_verts(pred), _verts(gt), np.asarray(regressor)).value)


def chamfer(pred, gt) -> float:
    p, g = _verts(pred), _verts(gt)
    if len(p) == 0 or len(g) == 0:
        raise ValueError("chamfer distance needs two nonempty point sets")
    return float(chamfer_t(p, g).value)


def edge_regularizer(mesh: Mesh) -> float:
    return float(edge_regularizer_t(mesh.vertices, vertex_adjacency(mesh)).value)


def laplacian_loss(mesh: Mesh) -> float:
    return float(laplacian_t(mesh.vertices, UniformLaplacian.of(mesh)).value)


def refine_loss(hand_pred: Mesh, obj_pred: Mesh, hand_gt: Mesh, obj_gt: Mesh, regressor,
                obj_points: np.ndarray | None = None) -> LossBreakdown:
    """Loss breakdown for refined meshes against ground truth.

    `obj_points` are the ground-truth object samples used by the Chamfer term
    (the ground-truth vertices when omitted).
    """
    if not np.array_equal(hand_pred.faces, hand_gt.faces) or not np.array_equal(obj_pred.faces, obj_gt.faces):
        raise ValueError("predicted and ground-truth topologies differ")
    pts = obj_gt.vertices if obj_points is None else obj_points
    target = LossTarget.build(hand_gt, pts, regressor, obj_gt)
    return breakdown(refine_loss_t(hand_pred.vertices, obj_pred.vertices, target))


def sample_surface(mesh: Mesh, count: int, rng: np.random.Generator) -> np.ndarray:
    """Area-weighted uniform samples on the mesh surface."""
    tri = mesh.triangles()
    area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    face = rng.choice(len(tri), size=count, p=area / area.sum())
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    t = tri[face]
    return ((1 - r1)[:, None] * t[:, 0] + (r1 * (1 - r2))[:, None] * t[:, 1] + (r1 * r2)[:, None] * t[:, 2])
