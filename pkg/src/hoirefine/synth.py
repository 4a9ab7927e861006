"""Synthetic grasp scenes: a capsule hand resting against a primitive object,
plus perturbed copies that play the role of coarse initial estimates."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation

from . import shapes
from .mesh import Mesh, MeshError, inside, load_mesh, save_mesh, signed_distances
from .metrics import intersection_volume, max_penetration

N_JOINTS = 21
FINGERS = ("thumb", "index", "middle", "ring", "little")

# base (x, y, z) mm, phalanx lengths mm, radius mm, initial direction
_FINGER_GEOMETRY = {
    "thumb": ((30.0, 22.0, -6.0), (34.0, 28.0, 24.0), 9.5, (0.75, 0.6, -0.3)),
    "index": ((24.0, 86.0, 0.0), (38.0, 24.0, 20.0), 8.5, (0.08, 1.0, 0.0)),
    "middle": ((8.0, 88.0, 0.0), (42.0, 27.0, 21.0), 8.5, (0.0, 1.0, 0.0)),
    "ring": ((-8.0, 87.0, 0.0), (39.0, 26.0, 20.0), 8.0, (-0.05, 1.0, 0.0)),
    "little": ((-24.0, 82.0, 0.0), (31.0, 19.0, 17.0), 7.0, (-0.12, 1.0, 0.0)),
}
_PALM_CENTER = np.array([0.0, 45.0, 0.0])
_PALM_AXES = (38.0, 46.0, 13.0)
# per-joint flexion at full curl (deg), proximal to distal
_FULL_CURL = (70.0, 90.0, 60.0)
_CAPSULE_SEGMENTS = 8
_CAPSULE_CAP_RINGS = 2
_WRIST_RING = 1


@dataclass(frozen=True)
class HandPose:
    """curl: per finger in [0, 1] (thumb first); spread: [-1, 1], +-12 deg fan."""
    curl: tuple[float, ...] = (0.3, 0.3, 0.3, 0.3, 0.3)
    spread: float = 0.0

    def validate(self) -> None:
        if len(self.curl) != 5:
            raise ValueError("curl needs one value per finger (5)")
        if any(not 0.0 <= c <= 1.0 for c in self.curl):
            raise ValueError("curl values must lie in [0, 1]")
        if not -1.0 <= self.spread <= 1.0:
            raise ValueError("spread must lie in [-1, 1]")


@dataclass(frozen=True)
class NoiseParams:
    vertex_sigma: float = 3.0
    translation: float = 10.0
    rotation: float = 0.0

    def validate(self) -> None:
        for k, val in asdict(self).items():
            if not np.isfinite(val) or val < 0:
                raise ValueError(f"noise parameter {k} must be finite and >= 0")


@dataclass(frozen=True)
class HandModel:
    mesh: Mesh
    contact_indices: np.ndarray
    regressor: np.ndarray  # (21, n) dense, rows sum to 1
    labels: tuple[str, ...]  # per-vertex part label


@dataclass(eq=False)
class GraspScene:
    hand_gt: Mesh
    obj_gt: Mesh
    hand_init: Mesh
    obj_init: Mesh
    contact_indices: np.ndarray
    joint_regressor: np.ndarray
    seed: int
    meta: dict = field(default_factory=dict)


def _rotation_between(a, b) -> np.ndarray:
    a = np.asarray(a, float) / np.linalg.norm(a)
    b = np.asarray(b, float) / np.linalg.norm(b)
    v = np.cross(a, b)
    c = float(np.dot(a, b))
    if np.linalg.norm(v) < 1e-12:
        if c > 0:
            return np.eye(3)
        perp = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(perp) < 1e-6:
            perp = np.cross(a, [0.0, 1.0, 0.0])
        return Rotation.from_rotvec(np.pi * perp / np.linalg.norm(perp)).as_matrix()
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx / (1.0 + c)


def make_object(kind: str, size, resolution: int = 162, seed: int = 0) -> Mesh:
    """Closed primitive centered at the origin.

    sphere: size=(radius,), resolution = minimum vertex count (icosphere level).
    box: size=(sx, sy, sz), resolution ~ vertex count (6 n^2 + 2).
    cylinder: size=(radius, height), resolution ~ vertex count (16 segments).
    `seed` is accepted for interface symmetry; primitives are deterministic.
    """
    size = tuple(float(s) for s in np.atleast_1d(size))
    if any(not np.isfinite(s) or s <= 0 for s in size):
        raise MeshError("object size parameters must be positive")
    if resolution < 8:
        raise MeshError("resolution must be at least 8 vertices")
    if kind == "sphere":
        return shapes.icosphere_for_count(size[0], resolution)
    if kind == "box":
        if len(size) == 1:
            size = size * 3
        n = max(1, int(round(np.sqrt(max(resolution - 2, 6) / 6.0))))
        return shapes.box(*size[:3], divisions=n)
    if kind == "cylinder":
        if len(size) < 2:
            raise MeshError("cylinder needs (radius, height)")
        segments = 16 if resolution >= 34 else 3 + (resolution - 2) // 4
        rings = max(2, int(round((resolution - 2) / segments)))
        return shapes.cylinder(size[0], size[1], segments=segments, rings=rings)
    raise MeshError(f"unknown object kind {kind!r}")


def make_hand(pose: HandPose | None = None, seed: int = 0) -> HandModel:
    """Five capsule-chain fingers on an ellipsoidal palm, 736 vertices.

    The palm faces -z, fingers extend along +y and curl toward -z. Joint order
    is wrist, then thumb..little with four joints each (base to tip).
    """
    pose = pose or HandPose()
    pose.validate()
    parts_v, parts_f, labels = [], [], []
    regressor_groups: list[np.ndarray] = [None] * N_JOINTS  # type: ignore[list-item]
    contact: list[np.ndarray] = []
    offset = 0

    pv, pf, prings = shapes.uv_ellipsoid(_PALM_AXES)
    pv = pv + _PALM_CENTER
    parts_v.append(pv)
    parts_f.append(pf)
    labels += ["palm"] * len(pv)
    regressor_groups[0] = prings[_WRIST_RING]
    rel = (pv - _PALM_CENTER) / np.array(_PALM_AXES)
    palm_inner = np.nonzero((rel[:, 2] < -0.6) & (np.abs(rel[:, 1]) < 0.7))[0]
    contact.append(palm_inner)
    offset += len(pv)

    spread_deg = 12.0 * pose.spread
    for f_idx, name in enumerate(FINGERS):
        base, lengths, radius, direction = _FINGER_GEOMETRY[name]
        d = np.asarray(direction, float)
        d /= np.linalg.norm(d)
        fan = (f_idx - 2) * spread_deg / 2.0 if name != "thumb" else -spread_deg
        d = Rotation.from_euler("z", fan, degrees=True).apply(d)
        # flex axis: perpendicular to the finger inside the palm plane (or thumb plane)
        ref = np.array([0.0, 0.0, 1.0]) if name != "thumb" else np.array([0.3, -0.5, 1.0])
        flex_axis = np.cross(ref, d)
        flex_axis /= np.linalg.norm(flex_axis)
        joint = np.asarray(base, float)
        for k in range(3):
            angle = np.deg2rad(_FULL_CURL[k] * pose.curl[f_idx])
            d = Rotation.from_rotvec(angle * flex_axis).apply(d)
            cv, cf, crings = shapes.capsule_grid(radius, lengths[k], _CAPSULE_SEGMENTS, _CAPSULE_CAP_RINGS)
            rot = _rotation_between([0.0, 0.0, 1.0], d)
            cv = cv @ rot.T + joint
            parts_v.append(cv)
            parts_f.append(cf + offset)
            labels += [f"{name}_{k + 1}"] * len(cv)
            j = 1 + 4 * f_idx + k
            regressor_groups[j] = crings[_CAPSULE_CAP_RINGS - 1] + offset
            if k == 2:
                regressor_groups[j + 1] = crings[_CAPSULE_CAP_RINGS] + offset
                tip = np.concatenate(crings[_CAPSULE_CAP_RINGS + 1:] + [np.array([len(cv) - 1])])
                contact.append(tip + offset)
            offset += len(cv)
            joint = joint + lengths[k] * d

    vertices = np.concatenate(parts_v)
    faces = np.concatenate(parts_f)
    regressor = np.zeros((N_JOINTS, len(vertices)))
    for j, group in enumerate(regressor_groups):
        regressor[j, group] = 1.0 / len(group)
    contact_idx = np.unique(np.concatenate(contact)).astype(np.int64)
    return HandModel(Mesh(vertices, faces), contact_idx, regressor, tuple(labels))


def _lattice_noise(vertices: np.ndarray, sigma: float, rng: np.random.Generator, n: int = 4) -> np.ndarray:
    """Smooth displacement field: Gaussian vectors on an n^3 control lattice
    spanning the bounding box, trilinearly interpolated to the vertices."""
    lo = vertices.min(axis=0) - 1.0
    hi = vertices.max(axis=0) + 1.0
    ctrl = rng.normal(0.0, sigma, size=(n, n, n, 3))
    t = (vertices - lo) / (hi - lo) * (n - 1)
    i0 = np.clip(np.floor(t).astype(int), 0, n - 2)
    f = t - i0
    out = np.zeros_like(vertices)
    for dx in (0, 1):
        wx = f[:, 0] if dx else 1.0 - f[:, 0]
        for dy in (0, 1):
            wy = f[:, 1] if dy else 1.0 - f[:, 1]
            for dz in (0, 1):
                wz = f[:, 2] if dz else 1.0 - f[:, 2]
                out += (wx * wy * wz)[:, None] * ctrl[i0[:, 0] + dx, i0[:, 1] + dy, i0[:, 2] + dz]
    return out


def perturb_mesh(mesh: Mesh, noise: NoiseParams, rng: np.random.Generator) -> Mesh:
    """Rigid offset (rotation about the centroid, then translation) plus smooth noise."""
    noise.validate()
    v = mesh.vertices.copy()
    if noise.rotation > 0:
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = np.deg2rad(rng.normal(0.0, noise.rotation))
        c = v.mean(axis=0)
        v = Rotation.from_rotvec(angle * axis).apply(v - c) + c
    if noise.translation > 0:
        v = v + rng.normal(0.0, noise.translation / np.sqrt(3.0), size=3)
    if noise.vertex_sigma > 0:
        v = v + _lattice_noise(mesh.vertices, noise.vertex_sigma, rng)
    return mesh.with_vertices(v)


def perturb(hand_gt: Mesh, obj_gt: Mesh, noise: NoiseParams, seed: int) -> tuple[Mesh, Mesh]:
    """Independent perturbations of hand and object; deterministic in `seed`."""
    hand_rng, obj_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    return perturb_mesh(hand_gt, noise, hand_rng), perturb_mesh(obj_gt, noise, obj_rng)


def _clear(hand: Mesh, obj: Mesh, gap: float) -> bool:
    if np.any(inside(obj.vertices, hand)):
        return False
    return bool(signed_distances(hand.vertices, obj).min() >= gap)


def _part(hand: HandModel, prefix: str) -> Mesh:
    """Closed sub-mesh of the hand vertices whose label starts with `prefix`."""
    ids = np.array([i for i, lab in enumerate(hand.labels) if lab.startswith(prefix)])
    remap = np.full(hand.mesh.n_vertices, -1)
    remap[ids] = np.arange(len(ids))
    keep = np.all(remap[hand.mesh.faces] >= 0, axis=1)
    return Mesh(hand.mesh.vertices[ids], remap[hand.mesh.faces[keep]])


def _place_object(hand: Mesh, obj: Mesh, center_xy, gap: float) -> Mesh:
    """Slide the object up along +z beneath the palm until it sits `gap` mm
    from the nearest hand vertex."""
    def at(depth):
        return obj.with_vertices(obj.vertices + np.array([center_xy[0], center_xy[1], -depth]))

    near, far = 0.0, 250.0
    if not _clear(hand, at(far), gap):
        raise RuntimeError("object does not clear the hand even at the far position")
    for _ in range(16):
        mid = 0.5 * (near + far)
        if _clear(hand, at(mid), gap):
            far = mid
        else:
            near = mid
    return at(far)


def _wrap_fingers(pose: HandPose, obj: Mesh, gap: float, step: float = 0.05) -> HandPose:
    """Curl each finger in turn until one more step would bring it within
    `gap` of the object (or through it)."""
    curl = list(pose.curl)
    for f_idx, name in enumerate(FINGERS):
        while curl[f_idx] + step <= 1.0:
            trial = curl.copy()
            trial[f_idx] = curl[f_idx] + step
            finger = _part(make_hand(HandPose(tuple(trial), pose.spread)), name)
            if not _clear(finger, obj, gap):
                break
            curl = trial
    return HandPose(tuple(curl), pose.spread)


def sample_object(rng: np.random.Generator):
    kind = str(rng.choice(["sphere", "box", "cylinder"]))
    if kind == "sphere":
        size = (float(rng.uniform(25.0, 40.0)),)
        resolution = 162
    elif kind == "box":
        size = tuple(float(s) for s in rng.uniform(35.0, 60.0, size=3))
        resolution = 98
    else:
        size = (float(rng.uniform(18.0, 30.0)), float(rng.uniform(60.0, 100.0)))
        resolution = 98
    return kind, size, resolution


def make_scene(seed: int, noise: NoiseParams | None = None, max_tries: int = 20) -> GraspScene:
    """Generate a collision-free ground-truth grasp and its perturbed estimate.

    Candidates whose ground truth penetrates or overlaps are rejected and
    resampled from the same seed stream.
    """
    noise = noise or NoiseParams()
    noise.validate()
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        open_pose = HandPose(curl=(0.0,) * 5, spread=float(rng.uniform(-0.5, 0.5)))
        kind, size, resolution = sample_object(rng)
        obj = make_object(kind, size, resolution)
        rot = Rotation.random(random_state=rng)
        obj = obj.with_vertices(rot.apply(obj.vertices))
        center_xy = (float(rng.uniform(-10.0, 10.0)), float(rng.uniform(45.0, 70.0)))
        gap = float(rng.uniform(0.5, 2.0))
        obj = _place_object(make_hand(open_pose).mesh, obj, center_xy, gap)
        pose = _wrap_fingers(open_pose, obj, gap)
        hand = make_hand(pose)
        if (max_penetration(hand.mesh, obj) == 0.0
                and intersection_volume(hand.mesh, obj) == 0.0
                and not np.any(inside(obj.vertices, hand.mesh))):
            break
    else:
        raise RuntimeError(f"could not generate a collision-free scene for seed {seed}")
    hand_init, obj_init = perturb(hand.mesh, obj, noise, int(rng.integers(2**63)))
    meta = {
        "seed": int(seed),
        "noise": asdict(noise),
        "object": {"kind": kind, "size": list(size), "resolution": resolution,
                   "rotation_quat": rot.as_quat().tolist(), "center_xy": list(center_xy), "gap": gap},
        "hand_pose": {"curl": list(pose.curl), "spread": pose.spread},
    }
    return GraspScene(hand.mesh, obj, hand_init, obj_init, hand.contact_indices,
                      hand.regressor, int(seed), meta)


# ------------------------------------------------------------------- file I/O


def export_scene(scene: GraspScene, directory: str | os.PathLike) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    save_mesh(scene.hand_gt, out / "hand_gt.obj")
    save_mesh(scene.obj_gt, out / "obj_gt.obj")
    save_mesh(scene.hand_init, out / "hand_init.obj")
    save_mesh(scene.obj_init, out / "obj_init.obj")
    (out / "contact.json").write_text(json.dumps([int(i) for i in scene.contact_indices]))
    rows, cols = np.nonzero(scene.joint_regressor)
    reg = {
        "shape": list(scene.joint_regressor.shape),
        "triplets": [[int(r), int(c), float(scene.joint_regressor[r, c])] for r, c in zip(rows, cols)],
    }
    (out / "regressor.json").write_text(json.dumps(reg))
    (out / "meta.json").write_text(json.dumps({**scene.meta, "seed": scene.seed}, indent=2, sort_keys=True))
    return out


def load_contact_indices(path: str | os.PathLike) -> np.ndarray:
    return np.asarray(json.loads(Path(path).read_text()), dtype=np.int64)


def load_regressor(path: str | os.PathLike) -> np.ndarray:
    data = json.loads(Path(path).read_text())
    reg = np.zeros(tuple(data["shape"]))
    for r, c, v in data["triplets"]:
        reg[int(r), int(c)] = v
    return reg


def load_scene(directory: str | os.PathLike) -> GraspScene:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    scene = GraspScene(
        hand_gt=load_mesh(d / "hand_gt.obj"),
        obj_gt=load_mesh(d / "obj_gt.obj"),
        hand_init=load_mesh(d / "hand_init.obj"),
        obj_init=load_mesh(d / "obj_init.obj"),
        contact_indices=load_contact_indices(d / "contact.json"),
        joint_regressor=load_regressor(d / "regressor.json"),
        seed=int(meta.get("seed", 0)),
        meta=meta,
    )
    if not np.array_equal(scene.hand_gt.faces, scene.hand_init.faces):
        raise MeshError(f"{d}: hand_gt and hand_init topologies differ")
    if not np.array_equal(scene.obj_gt.faces, scene.obj_init.faces):
        raise MeshError(f"{d}: obj_gt and obj_init topologies differ")
    n = scene.hand_init.n_vertices
    if scene.contact_indices.size and (scene.contact_indices.min() < 0 or scene.contact_indices.max() >= n):
        raise MeshError(f"{d}: contact index outside [0, {n})")
    if scene.joint_regressor.shape != (N_JOINTS, n):
        raise MeshError(f"{d}: regressor shape {scene.joint_regressor.shape} != ({N_JOINTS}, {n})")
    return scene
