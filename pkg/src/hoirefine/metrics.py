"""Evaluation metrics: joint/mesh/object errors and physical plausibility.

All values are computed in float64; lengths in mm, volumes in cm^3.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .mesh import Mesh, inside, signed_distances

METRIC_KEYS = ("hand_joint_error_mm", "hand_mesh_error_mm", "object_error_mm", "max_pen_mm", "inter_vol_cm3")


@dataclass(frozen=True)
class MetricsReport:
    hand_joint_error_mm: float
    hand_mesh_error_mm: float
    object_error_mm: float
    max_pen_mm: float
    inter_vol_cm3: float

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def mean(cls, reports: list["MetricsReport"]) -> "MetricsReport":
        return cls(**{k: float(np.mean([getattr(r, k) for r in reports])) for k in METRIC_KEYS})


def max_penetration(hand: Mesh, obj: Mesh) -> float:
    """Deepest hand vertex inside the object surface (mm); 0 without contact.

    Only the object's surface is consulted, so the arguments do not commute.
    """
    sd = signed_distances(hand.vertices, obj)
    return float(max(0.0, -sd.min()))


def intersection_volume(hand: Mesh, obj: Mesh, voxel: float = 5.0) -> float:
    """Volume (cm^3) of grid voxels whose centers lie inside both meshes.

    The grid spans the union bounding box padded by one voxel. Only centers in
    the overlap of the two boxes can be inside both, so only those are tested.
    """
    hand.check_watertight()
    obj.check_watertight()
    all_v = np.concatenate([hand.vertices, obj.vertices])
    origin = all_v.min(axis=0) - voxel
    top = all_v.max(axis=0) + voxel
    n_cells = np.ceil((top - origin) / voxel).astype(int)

    lo = np.maximum(hand.vertices.min(axis=0), obj.vertices.min(axis=0))
    hi = np.minimum(hand.vertices.max(axis=0), obj.vertices.max(axis=0))
    if np.any(lo > hi):
        return 0.0
    # cell k has center origin + (k + 0.5) * voxel
    k_lo = np.maximum(np.ceil((lo - origin) / voxel - 0.5), 0).astype(int)
    k_hi = np.minimum(np.floor((hi - origin) / voxel - 0.5), n_cells - 1).astype(int)
    if np.any(k_lo > k_hi):
        return 0.0
    axes = [origin[d] + (np.arange(k_lo[d], k_hi[d] + 1) + 0.5) * voxel for d in range(3)]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    in_obj = inside(centers, obj)
    if not in_obj.any():
        return 0.0
    both = inside(centers[in_obj], hand)
    return float(both.sum() * voxel**3 / 1000.0)


def hand_mesh_error(pred: Mesh, gt: Mesh) -> float:
    """Mean per-vertex Euclidean distance (mm)."""
    return float(np.linalg.norm(pred.vertices - gt.vertices, axis=1).mean())


def hand_joint_error(pred: Mesh, gt: Mesh, regressor: np.ndarray) -> float:
    d = regressor @ pred.vertices - regressor @ gt.vertices
    return float(np.linalg.norm(d, axis=1).mean())


def nearest_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """For each point of `a`, Euclidean distance to the nearest point of `b`."""
    out = np.empty(len(a))
    for s in range(0, len(a), 512):
        d2 = ((a[s:s + 512, None, :] - b[None, :, :]) ** 2).sum(-1)
        out[s:s + 512] = np.sqrt(d2.min(axis=1))
    return out


def object_error(pred_points: np.ndarray, gt_points: np.ndarray) -> float:
    """Symmetric Chamfer distance in mm: average of the two directional mean
    nearest-neighbor distances."""
    return float(0.5 * (nearest_distances(pred_points, gt_points).mean()
                        + nearest_distances(gt_points, pred_points).mean()))


def evaluate(hand_pred: Mesh, obj_pred: Mesh, hand_gt: Mesh, obj_gt: Mesh,
             regressor: np.ndarray, voxel: float = 5.0) -> MetricsReport:
    return MetricsReport(
        hand_joint_error_mm=hand_joint_error(hand_pred, hand_gt, regressor),
        hand_mesh_error_mm=hand_mesh_error(hand_pred, hand_gt),
        object_error_mm=object_error(obj_pred.vertices, obj_gt.vertices),
        max_pen_mm=max_penetration(hand_pred, obj_pred),
        inter_vol_cm3=intersection_volume(hand_pred, obj_pred, voxel),
    )
