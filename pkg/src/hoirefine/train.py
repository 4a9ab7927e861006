"""Adam, scene preparation, the training loop and the pipeline gradient check."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .graph import CommonEdges, FinalGraphs, build_final_graphs
from .losses import LossTarget, refine_loss_t, sample_surface
from .mesh import Mesh
from .metrics import MetricsReport, evaluate
from .model import ModelConfig, RefineResult, check_params, init_params, refine
from .synth import GraspScene

log = logging.getLogger(__name__)

OBJ_SAMPLES = 600


# ------------------------------------------------------------------------ Adam


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> dict[str, np.ndarray]:
    """One bias-corrected Adam update; returns new arrays and advances `state`."""
    state.step += 1
    t = state.step
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - state.beta1) * g if m is None else state.beta1 * m + (1 - state.beta1) * g
        v = (1 - state.beta2) * g * g if v is None else state.beta2 * v + (1 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - state.beta1**t)
        v_hat = v / (1 - state.beta2**t)
        out[name] = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out


# ---------------------------------------------------------------- scene setup


@dataclass(eq=False)
class PreparedScene:
    """Per-scene data that does not depend on the trainable parameters."""
    hand_init: Mesh
    obj_init: Mesh
    hand_gt: Mesh
    obj_gt: Mesh
    contact_indices: np.ndarray
    regressor: np.ndarray
    common: CommonEdges
    target: LossTarget
    seed: int = 0

    @classmethod
    def from_scene(cls, scene: GraspScene, obj_samples: int = OBJ_SAMPLES) -> "PreparedScene":
        rng = np.random.default_rng([scene.seed, 600])
        points = sample_surface(scene.obj_gt, obj_samples, rng)
        return cls(scene.hand_init, scene.obj_init, scene.hand_gt, scene.obj_gt,
                   np.asarray(scene.contact_indices), scene.joint_regressor,
                   CommonEdges.build(scene.hand_init, scene.obj_init, scene.contact_indices),
                   LossTarget.build(scene.hand_gt, points, scene.joint_regressor, scene.obj_gt),
                   scene.seed)


@dataclass(eq=False)
class ForwardPass:
    graphs: FinalGraphs
    result: RefineResult
    terms: dict


def forward(prep: PreparedScene, params: dict[str, ad.Tensor], config: ModelConfig) -> ForwardPass:
    graphs = build_final_graphs(prep.hand_init, prep.obj_init, prep.contact_indices, params,
                                gamma=config.gamma, use_ec=config.use_ec, use_ea=config.use_ea,
                                common=prep.common, fps_count=config.fps_count)
    result = refine(prep.hand_init, prep.obj_init, graphs, params)
    terms = refine_loss_t(result.hand_vertices, result.obj_vertices, prep.target)
    return ForwardPass(graphs, result, terms)


def scene_loss_and_grad(prep: PreparedScene, values: dict[str, np.ndarray], config: ModelConfig):
    params = ad.parameters(values)
    fp = forward(prep, params, config)
    grads = ad.grad(fp.terms["total"], params)
    scalars = {k: float(v.value) for k, v in fp.terms.items()}
    return scalars, grads


# ---------------------------------------------------------------------- train


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 1
    epochs: int = 200
    lr: float = 1e-4
    lr_drop_epoch: int | None = None
    lr_drop_to: float = 1e-5
    threads: int = 1

    def validate(self) -> None:
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr < 0 or self.lr_drop_to < 0:
            raise ValueError("learning rates must be >= 0")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    curve: list[dict]


def _map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def batch_loss_and_grad(scenes: list[PreparedScene], values, config: ModelConfig, threads: int = 1):
    """Mean loss terms and gradient over scenes, reduced in scene order."""
    outs = _map(lambda s: scene_loss_and_grad(s, values, config), scenes, threads)
    n = len(scenes)
    scalars = {k: math.fsum(o[0][k] for o in outs) / n for k in outs[0][0]}
    grads = {}
    for name in values:
        acc = np.zeros_like(values[name])
        for _, g in outs:
            acc = acc + g[name]
        grads[name] = acc / n
    return scalars, grads


def train(scenes: list[PreparedScene], model_config: ModelConfig, config: TrainConfig,
          params: dict[str, np.ndarray] | None = None) -> TrainResult:
    """Full-batch Adam on the mean refinement loss over `scenes`.

    One optimizer step per epoch. The curve row of epoch e holds the losses
    evaluated before that epoch's update.
    """
    if not scenes:
        raise ValueError("training needs at least one scene")
    model_config.validate()
    config.validate()
    values = params if params is not None else init_params(model_config, np.random.default_rng(config.seed))
    check_params(values, model_config)
    state = AdamState(lr=config.lr)
    curve = []
    for epoch in range(1, config.epochs + 1):
        if config.lr_drop_epoch is not None and epoch > config.lr_drop_epoch:
            state.lr = config.lr_drop_to
        scalars, grads = batch_loss_and_grad(scenes, values, model_config, config.threads)
        if not np.isfinite(scalars["total"]):
            bad = [k for k, v in scalars.items() if not np.isfinite(v)]
            raise TrainingDiverged(f"loss became non-finite at epoch {epoch} (terms: {', '.join(bad)})")
        bad_grads = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
        if bad_grads:
            raise TrainingDiverged(f"non-finite gradient for {bad_grads[0]} at epoch {epoch}")
        curve.append({"epoch": epoch, "loss_total": scalars["total"], "loss_hand": scalars["hand"],
                      "loss_obj": scalars["obj"], **{k: scalars[k] for k in ("l_v", "l_j", "l_cd", "l_e", "l_l")}})
        log.info("epoch %d loss %.4f (hand %.4f, obj %.4f) lr %.1e", epoch, scalars["total"],
                 scalars["hand"], scalars["obj"], state.lr)
        values = adam_step(values, grads, state)
    return TrainResult(values, curve)


# ----------------------------------------------------------------- evaluation


@dataclass
class SceneEvaluation:
    initial: MetricsReport
    refined: MetricsReport
    hand: Mesh
    obj: Mesh
    graphs: FinalGraphs


def evaluate_scene(prep: PreparedScene, values: dict[str, np.ndarray], config: ModelConfig,
                   voxel: float = 5.0) -> SceneEvaluation:
    params = {k: ad.Tensor(v) for k, v in values.items()}
    fp = forward(prep, params, config)
    initial = evaluate(prep.hand_init, prep.obj_init, prep.hand_gt, prep.obj_gt, prep.regressor, voxel)
    refined = evaluate(fp.result.hand, fp.result.obj, prep.hand_gt, prep.obj_gt, prep.regressor, voxel)
    return SceneEvaluation(initial, refined, fp.result.hand, fp.result.obj, fp.graphs)


# ------------------------------------------------------------------ gradcheck


def tiny_scene(seed: int) -> PreparedScene:
    """Octahedron hand (6 vertices) against a cube object (8 vertices)."""
    rng = np.random.default_rng(seed)
    oct_v = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float) * 12.0
    oct_f = np.array([[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4], [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]])
    cube_v = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)], float) * 10.0
    cube_v = cube_v + np.array([0.0, 0.0, -25.0])
    cube_f = np.array([[0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5], [0, 4, 5], [0, 5, 1],
                       [2, 3, 7], [2, 7, 6], [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3]])
    hand_gt = Mesh(oct_v, oct_f)
    obj_gt = Mesh(cube_v, cube_f)
    hand_init = hand_gt.with_vertices(oct_v + rng.normal(0, 2.0, size=oct_v.shape))
    obj_init = obj_gt.with_vertices(cube_v + rng.normal(0, 2.0, size=cube_v.shape))
    reg = rng.random((21, 6))
    reg /= reg.sum(axis=1, keepdims=True)
    contact = np.array([3, 5])
    points = sample_surface(obj_gt, 40, rng)
    return PreparedScene(hand_init, obj_init, hand_gt, obj_gt, contact, reg,
                         CommonEdges.build(hand_init, obj_init, contact),
                         LossTarget.build(hand_gt, points, reg, obj_gt), seed)


@dataclass
class GradcheckReport:
    max_rel_error: float
    errors: list[float]
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def random_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Initial parameters with a nonzero random displacement head and biases,
    so every parameter influences the loss."""
    values = init_params(config, rng)
    for name, p in values.items():
        if name.startswith("head.") or name.endswith(".b"):
            values[name] = rng.normal(0.0, 0.05, size=p.shape)
    return values


def gradcheck(seed: int = 0, config: ModelConfig | None = None, directions: int = 20,
              step: float = 1e-6, tolerance: float = 1e-4) -> GradcheckReport:
    """Directional central differences of the full pipeline loss vs reverse mode.

    relative error = |fd - g.u| / max(|fd|, |g.u|) for unit random directions u.
    """
    config = config or ModelConfig(descriptor_dim=8, hidden=8, att_dim=4)
    rng = np.random.default_rng(seed)
    prep = tiny_scene(seed)
    values = random_params(config, rng)
    _, grads = scene_loss_and_grad(prep, values, config)

    def loss_at(vals):
        params = {k: ad.Tensor(v) for k, v in vals.items()}
        return float(forward(prep, params, config).terms["total"].value)

    errors = []
    names = sorted(values)
    for _ in range(directions):
        u = {k: rng.normal(size=values[k].shape) for k in names}
        norm = math.sqrt(sum(float((d * d).sum()) for d in u.values()))
        u = {k: d / norm for k, d in u.items()}
        plus = loss_at({k: values[k] + step * u[k] for k in names})
        minus = loss_at({k: values[k] - step * u[k] for k in names})
        fd = (plus - minus) / (2 * step)
        analytic = math.fsum(float((grads[k] * u[k]).sum()) for k in names)
        scale = max(abs(fd), abs(analytic), 1e-300)
        errors.append(abs(fd - analytic) / scale)
    return GradcheckReport(max(errors), errors, tolerance)
