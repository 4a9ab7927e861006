"""Graph-convolution refinement of hand and object vertices.

Four GC blocks, each holding four message-passing layers (one per graph
kind). Hand nodes combine messages over hand-hand and object->hand edges,
object nodes over object-object and hand->object edges. Blocks 1-3 chain;
block 4 reads the initial features and every earlier block output, and a
linear head turns its output into per-vertex displacements.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .graph import DEFAULT_GAMMA, FPS_COUNT, KINDS, FinalGraphs, TypedEdgeSet
from .mesh import Mesh

N_BLOCKS = 4
CLASSES = ("hand", "obj")


@dataclass(frozen=True)
class ModelConfig:
    descriptor_dim: int = 64
    hidden: int = 64
    att_dim: int = 32
    gamma: float = DEFAULT_GAMMA
    use_ec: bool = True
    use_ea: bool = True
    fps_count: int = FPS_COUNT

    def validate(self) -> None:
        for name in ("descriptor_dim", "hidden", "att_dim", "fps_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")

    @property
    def node_dim(self) -> int:
        return 3 + self.descriptor_dim

    @property
    def stats_dim(self) -> int:
        return 6 + 3 * self.fps_count

    def block_input_dim(self, k: int) -> int:
        """Width of the node features entering block k (1-based)."""
        if k == 1:
            return self.node_dim
        if k < N_BLOCKS:
            return self.hidden
        return self.node_dim + (N_BLOCKS - 1) * self.hidden

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        for c in CLASSES:
            shapes[f"enc.{c}.W"] = (self.stats_dim, self.descriptor_dim)
            shapes[f"enc.{c}.b"] = (self.descriptor_dim,)
        for k in KINDS:
            shapes[f"att.{k}.Wq"] = (self.node_dim, self.att_dim)
            shapes[f"att.{k}.Wk"] = (self.node_dim, self.att_dim)
        for b in range(1, N_BLOCKS + 1):
            for c in CLASSES:
                shapes[f"block{b}.{c}.U"] = (2 * self.block_input_dim(b), self.hidden)
                shapes[f"block{b}.{c}.b"] = (self.hidden,)
        for c in CLASSES:
            shapes[f"head.{c}.H"] = (self.hidden, 3)
        return shapes


# typical node degree (self + face neighbours) used to scale the initial weights
_FAN_DEGREE = 7.0


def init_params(config: ModelConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Random initial parameters; the displacement head starts at zero so an
    untrained model leaves meshes unchanged."""
    params = {}
    for name, shape in config.param_shapes().items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape)
        elif name.startswith("head."):
            params[name] = np.zeros(shape)
        elif name.startswith("enc."):
            params[name] = rng.normal(0.0, 1.0 / np.sqrt(shape[0]), size=shape)
        elif name.startswith("att."):
            # inputs are mm-scale; keep initial attention logits O(1)
            params[name] = rng.normal(0.0, 0.01 / np.sqrt(shape[0]), size=shape)
        else:
            params[name] = rng.normal(0.0, np.sqrt(2.0 / shape[0]) / _FAN_DEGREE, size=shape)
    return params


# --------------------------------------------------------------------- forward


def aggregate(x_self, x_neigh, edges: TypedEdgeSet) -> Tensor:
    """msg_i = x_self[i] + sum over edges (p -> i) of w * x_neigh[p]."""
    x_self, x_neigh = ad.as_tensor(x_self), ad.as_tensor(x_neigh)
    n = x_self.shape[0]
    if len(edges):
        if edges.src.min() < 0 or edges.src.max() >= x_neigh.shape[0]:
            raise IndexError(f"{edges.kind} edge source index out of range")
        if edges.dst.min() < 0 or edges.dst.max() >= n:
            raise IndexError(f"{edges.kind} edge destination index out of range")
    else:
        return x_self
    return ad.add(x_self, ad.spmm(edges.src, edges.dst, edges.weights(), x_neigh, n))


def gc_block(k: int, x_hand, x_obj, graphs: dict[str, TypedEdgeSet],
             params: dict[str, Tensor]) -> tuple[Tensor, Tensor]:
    """One GC block: ReLU(concat(intra msg, inter msg) @ U + b) per class."""
    x_hand, x_obj = ad.as_tensor(x_hand), ad.as_tensor(x_obj)
    u_h, u_o = params[f"block{k}.hand.U"], params[f"block{k}.obj.U"]
    for x, u, cls in ((x_hand, u_h, "hand"), (x_obj, u_o, "obj")):
        if 2 * x.shape[1] != u.shape[0]:
            raise ValueError(f"block {k} {cls}: input width {x.shape[1]} does not match "
                             f"block{k}.{cls}.U with {u.shape[0]} rows")
    msg_h = ad.concat([aggregate(x_hand, x_hand, graphs["hh"]), aggregate(x_hand, x_obj, graphs["oh"])])
    msg_o = ad.concat([aggregate(x_obj, x_obj, graphs["oo"]), aggregate(x_obj, x_hand, graphs["ho"])])
    out_h = ad.relu(ad.add(ad.matmul(msg_h, u_h), params[f"block{k}.hand.b"]))
    out_o = ad.relu(ad.add(ad.matmul(msg_o, u_o), params[f"block{k}.obj.b"]))
    return out_h, out_o


@dataclass(eq=False)
class BlockTrace:
    hand: list[Tensor]
    obj: list[Tensor]


@dataclass(eq=False)
class RefineResult:
    disp_hand: Tensor
    disp_obj: Tensor
    hand_vertices: Tensor
    obj_vertices: Tensor
    hand_init: Mesh
    obj_init: Mesh
    trace: BlockTrace

    @property
    def hand(self) -> Mesh:
        """Refined hand mesh (built on demand; raises for non-finite vertices)."""
        return self.hand_init.with_vertices(self.hand_vertices.value)

    @property
    def obj(self) -> Mesh:
        return self.obj_init.with_vertices(self.obj_vertices.value)


def refine(hand_init: Mesh, obj_init: Mesh, graphs: FinalGraphs, params: dict[str, Tensor]) -> RefineResult:
    """Run the four blocks and add the predicted displacements to the vertices."""
    x0_h, x0_o = graphs.x_hand.features, graphs.x_obj.features
    trace = BlockTrace([], [])
    h, o = x0_h, x0_o
    for k in range(1, N_BLOCKS):
        h, o = gc_block(k, h, o, graphs.graphs, params)
        trace.hand.append(h)
        trace.obj.append(o)
    h4, o4 = gc_block(N_BLOCKS, ad.concat([x0_h] + trace.hand), ad.concat([x0_o] + trace.obj),
                      graphs.graphs, params)
    trace.hand.append(h4)
    trace.obj.append(o4)
    disp_h = ad.matmul(h4, params["head.hand.H"])
    disp_o = ad.matmul(o4, params["head.obj.H"])
    v_h = ad.add(hand_init.vertices, disp_h)
    v_o = ad.add(obj_init.vertices, disp_o)
    return RefineResult(disp_h, disp_o, v_h, v_o, hand_init, obj_init, trace)


# ------------------------------------------------------------------ checkpoint


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | os.PathLike, params: dict[str, np.ndarray], config: ModelConfig,
                    extra: dict | None = None) -> None:
    """JSON of named matrices with shape headers. Python's float repr is
    round-trip exact, so reloading reproduces every bit."""
    data = {
        "config": asdict(config),
        "params": {k: {"shape": list(np.shape(v)), "data": np.asarray(v, dtype=np.float64).reshape(-1).tolist()}
                   for k, v in params.items()},
    }
    if extra:
        data["extra"] = extra
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh)


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], ModelConfig, dict]:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    config = ModelConfig(**data["config"])
    params = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in data["params"].items()}
    check_params(params, config)
    return params, config, data.get("extra", {})


def check_params(params: dict[str, np.ndarray], config: ModelConfig) -> None:
    expected = config.param_shapes()
    for name, shape in expected.items():
        if name not in params:
            raise CheckpointError(f"missing parameter {name}")
        if tuple(params[name].shape) != tuple(shape):
            raise CheckpointError(f"parameter {name} has shape {tuple(params[name].shape)}, expected {shape}")
    extra = sorted(set(params) - set(expected))
    if extra:
        raise CheckpointError(f"unexpected parameter {extra[0]}")
