"""Hand/object graph initialization.

Node features are vertex coordinates concatenated with a per-class global
descriptor. Edges come in four kinds, hand-hand ("hh"), object-object ("oo"),
hand->object ("ho") and object->hand ("oh"), and two origins: common
relation edges (mesh faces, contact-prior nearest neighbours) and
attention-guided soft edges (thresholded softmax attention). The final
graph per kind is their union with summed weights.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .mesh import Mesh, vertex_adjacency

log = logging.getLogger(__name__)

KINDS = ("hh", "oo", "ho", "oh")
INTRA = ("hh", "oo")
DEFAULT_GAMMA = 0.01
FPS_COUNT = 32


class GraphError(ValueError):
    pass


@dataclass(eq=False)
class NodeFeatureSet:
    """Per-node rows [x, y, z, descriptor...] for one class."""
    features: Tensor
    cls: str
    descriptor_dim: int

    @property
    def rows(self) -> np.ndarray:
        return self.features.value

    def __len__(self):
        return self.features.shape[0]


@dataclass(eq=False)
class TypedEdgeSet:
    """Directed weighted edges src -> dst of one graph kind.

    For merged sets, `from_common` / `from_attention` record which families
    contributed each edge. `weight_tensor` carries the differentiable weights
    when they depend on trainable attention parameters.
    """
    kind: str
    src: np.ndarray
    dst: np.ndarray
    weight: np.ndarray
    origin: str
    from_common: np.ndarray | None = None
    from_attention: np.ndarray | None = None
    weight_tensor: Tensor | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise GraphError(f"unknown edge kind {self.kind!r}")
        self.src = np.asarray(self.src, dtype=np.int64).reshape(-1)
        self.dst = np.asarray(self.dst, dtype=np.int64).reshape(-1)
        self.weight = np.asarray(self.weight, dtype=np.float64).reshape(-1)
        if not (len(self.src) == len(self.dst) == len(self.weight)):
            raise GraphError("src, dst and weight lengths differ")
        n = len(self.src)
        if self.from_common is None:
            self.from_common = np.full(n, self.origin == "common")
        if self.from_attention is None:
            self.from_attention = np.full(n, self.origin == "attention")

    def __len__(self):
        return len(self.src)

    def weights(self) -> Tensor:
        return self.weight_tensor if self.weight_tensor is not None else Tensor(self.weight)

    def triplets(self) -> list[tuple[int, int, float]]:
        return list(zip(self.src.tolist(), self.dst.tolist(), self.weight.tolist()))

    def keys(self, n_dst: int | None = None) -> np.ndarray:
        n = n_dst if n_dst is not None else (int(self.dst.max()) + 1 if len(self) else 1)
        return self.src * n + self.dst

    def count(self, family: str) -> int:
        mask = self.from_common if family == "common" else self.from_attention
        return int(mask.sum())

    @classmethod
    def empty(cls, kind: str, origin: str) -> "TypedEdgeSet":
        return cls(kind, np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0), origin)


@dataclass(eq=False)
class AttentionParams:
    w_q: Tensor
    w_k: Tensor

    @property
    def att_dim(self) -> int:
        return self.w_q.shape[1]


# ---------------------------------------------------------------- node features


def init_nodes(mesh: Mesh, descriptor, cls: str) -> NodeFeatureSet:
    """Row i = vertex_i followed by the class descriptor."""
    descriptor = ad.as_tensor(descriptor)
    if not np.all(np.isfinite(descriptor.value)):
        raise GraphError("descriptor must be finite")
    d = descriptor.value.size
    desc_row = ad.reshape(descriptor, (1, d))
    ones = np.ones((mesh.n_vertices, 1))
    feats = ad.concat([Tensor(mesh.vertices), ad.matmul(ones, desc_row)], axis=1)
    return NodeFeatureSet(feats, cls, d)


def farthest_point_indices(points: np.ndarray, k: int = FPS_COUNT) -> np.ndarray:
    """Greedy farthest-point selection starting at index 0.

    Ties go to the lowest index. With fewer than k distinct points the
    selection wraps back onto already chosen points (min-distance 0).
    """
    points = np.asarray(points, dtype=np.float64)
    chosen = [0]
    mind = np.sum((points - points[0]) ** 2, axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(mind))
        chosen.append(nxt)
        mind = np.minimum(mind, np.sum((points - points[nxt]) ** 2, axis=1))
    return np.asarray(chosen, dtype=np.int64)


def descriptor_stats(mesh: Mesh, fps_count: int = FPS_COUNT) -> np.ndarray:
    """centroid (3) | bbox extents (3) | farthest-point samples (3 * fps_count)."""
    v = mesh.vertices
    fps = v[farthest_point_indices(v, fps_count)]
    return np.concatenate([v.mean(axis=0), v.max(axis=0) - v.min(axis=0), fps.reshape(-1)])


def scene_descriptor(hand_init: Mesh, obj_init: Mesh, encoder: dict[str, Tensor],
                     fps_count: int = FPS_COUNT) -> tuple[Tensor, Tensor]:
    """Global descriptor per class: an affine map of geometric statistics.

    `encoder` holds enc.hand.W, enc.hand.b, enc.obj.W, enc.obj.b.
    """
    out = []
    for cls, mesh in (("hand", hand_init), ("obj", obj_init)):
        stats = descriptor_stats(mesh, fps_count)[None, :]
        out.append(ad.add(ad.matmul(stats, encoder[f"enc.{cls}.W"]), encoder[f"enc.{cls}.b"]))
    return out[0], out[1]


# ------------------------------------------------------------------------ edges


def common_edges_intra(mesh: Mesh, kind: str) -> TypedEdgeSet:
    """Face-induced edges in both directions, weight 1."""
    e = vertex_adjacency(mesh)
    src = np.concatenate([e[:, 0], e[:, 1]])
    dst = np.concatenate([e[:, 1], e[:, 0]])
    order = np.lexsort((dst, src))
    return TypedEdgeSet(kind, src[order], dst[order], np.ones(len(src)), "common")


def common_edges_inter(hand_vertices, obj_vertices, contact_indices) -> tuple[TypedEdgeSet, TypedEdgeSet]:
    """Each contact-prior hand vertex -> its nearest object vertex, plus the
    reversed set. Exact brute-force search; ties go to the lowest object index."""
    hand_vertices = np.asarray(hand_vertices, dtype=np.float64)
    obj_vertices = np.asarray(obj_vertices, dtype=np.float64)
    contact = np.unique(np.asarray(contact_indices, dtype=np.int64))
    if contact.size == 0:
        log.warning("empty contact prior: no common hand-object edges")
        return TypedEdgeSet.empty("ho", "common"), TypedEdgeSet.empty("oh", "common")
    if contact.min() < 0 or contact.max() >= len(hand_vertices):
        raise GraphError("contact index outside the hand vertex range")
    d2 = ((hand_vertices[contact, None, :] - obj_vertices[None, :, :]) ** 2).sum(-1)
    nearest = np.argmin(d2, axis=1)
    ones = np.ones(len(contact))
    ho = TypedEdgeSet("ho", contact, nearest, ones, "common")
    oh = TypedEdgeSet("oh", nearest.copy(), contact.copy(), ones.copy(), "common")
    return ho, oh


def attention_matrix(x_src, x_dst, params: AttentionParams) -> Tensor:
    """rowsoftmax((X_src W_q)(X_dst W_k)^T / sqrt(d_att))."""
    xs = x_src.features if isinstance(x_src, NodeFeatureSet) else ad.as_tensor(x_src)
    xd = x_dst.features if isinstance(x_dst, NodeFeatureSet) else ad.as_tensor(x_dst)
    if xs.shape[1] != params.w_q.shape[0] or xd.shape[1] != params.w_k.shape[0]:
        raise GraphError("feature width does not match the attention projections")
    q = ad.matmul(xs, params.w_q)
    k = ad.matmul(xd, params.w_k)
    logits = ad.mul(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(params.att_dim))
    return ad.softmax_rows(logits)


def attention_edges(attention, gamma: float = DEFAULT_GAMMA, kind: str = "ho") -> TypedEdgeSet:
    """Soft edges (i -> j, A[i, j]) for every entry strictly above gamma.

    Diagonal entries are skipped for the intra-class kinds (no self-loops).
    """
    if not 0.0 < gamma < 1.0:
        raise GraphError("gamma must lie in (0, 1)")
    a = ad.as_tensor(attention)
    mask = a.value > gamma
    if kind in INTRA:
        np.fill_diagonal(mask, False)
    src, dst = np.nonzero(mask)
    w_t = ad.gather(a, src, dst) if a.requires_grad else None
    return TypedEdgeSet(kind, src, dst, a.value[src, dst], "attention", weight_tensor=w_t)


def merge_edge_sets(common: TypedEdgeSet, attention: TypedEdgeSet) -> TypedEdgeSet:
    """Union of connectivity; weights of edges present in both are added."""
    if common.kind != attention.kind:
        raise GraphError(f"cannot merge edge kinds {common.kind!r} and {attention.kind!r}")
    src = np.concatenate([common.src, attention.src])
    dst = np.concatenate([common.dst, attention.dst])
    n = int(max(src.max(initial=0), dst.max(initial=0))) + 1
    keys = src * n + dst
    uniq, pos = np.unique(keys, return_inverse=True)
    m = len(uniq)
    n_c = len(common)
    weight = np.zeros(m)
    np.add.at(weight, pos, np.concatenate([common.weight, attention.weight]))
    from_c = np.zeros(m, bool)
    from_a = np.zeros(m, bool)
    from_c[pos[:n_c]] = common.from_common
    from_a[pos[:n_c]] |= common.from_attention
    from_c[pos[n_c:]] |= attention.from_common
    from_a[pos[n_c:]] |= attention.from_attention
    weight_t = None
    if common.weight_tensor is not None or attention.weight_tensor is not None:
        weight_t = ad.add(ad.scatter_add(common.weights(), pos[:n_c], m),
                          ad.scatter_add(attention.weights(), pos[n_c:], m))
    return TypedEdgeSet(common.kind, uniq // n, uniq % n, weight, "merged",
                        from_common=from_c, from_attention=from_a, weight_tensor=weight_t)


# ------------------------------------------------------------------ final graph


@dataclass(eq=False)
class FinalGraphs:
    x_hand: NodeFeatureSet
    x_obj: NodeFeatureSet
    graphs: dict[str, TypedEdgeSet]
    common: dict[str, TypedEdgeSet]
    attention: dict[str, TypedEdgeSet]

    def summary(self) -> dict:
        return {
            "node_features": {"hand": list(self.x_hand.rows.shape), "obj": list(self.x_obj.rows.shape)},
            "edges": {k: {"total": len(g), "common": g.count("common"), "attention": g.count("attention"),
                          "both": int((g.from_common & g.from_attention).sum())}
                      for k, g in self.graphs.items()},
        }


@dataclass(frozen=True)
class CommonEdges:
    """The parameter-free part of the graph, reusable across training steps."""
    hh: TypedEdgeSet
    oo: TypedEdgeSet
    ho: TypedEdgeSet
    oh: TypedEdgeSet

    @classmethod
    def build(cls, hand_init: Mesh, obj_init: Mesh, contact_indices) -> "CommonEdges":
        ho, oh = common_edges_inter(hand_init.vertices, obj_init.vertices, contact_indices)
        return cls(common_edges_intra(hand_init, "hh"), common_edges_intra(obj_init, "oo"), ho, oh)


def build_final_graphs(hand_init: Mesh, obj_init: Mesh, contact_indices, params: dict[str, Tensor],
                       gamma: float = DEFAULT_GAMMA, use_ec: bool = True, use_ea: bool = True,
                       common: CommonEdges | None = None, fps_count: int = FPS_COUNT) -> FinalGraphs:
    """Node features and the four merged edge sets for one scene.

    Attention matrices: hh/oo self-attention within a class, ho cross-attention
    from hand rows to object columns, oh from object rows to hand columns.
    Disabled families contribute no edges at all.
    """
    zeta_h, zeta_o = scene_descriptor(hand_init, obj_init, params, fps_count)
    x_hand = init_nodes(hand_init, zeta_h, "hand")
    x_obj = init_nodes(obj_init, zeta_o, "obj")
    pairs = {"hh": (x_hand, x_hand), "oo": (x_obj, x_obj), "ho": (x_hand, x_obj), "oh": (x_obj, x_hand)}

    if use_ec:
        common = common or CommonEdges.build(hand_init, obj_init, contact_indices)
        ec = {k: getattr(common, k) for k in KINDS}
    else:
        ec = {k: TypedEdgeSet.empty(k, "common") for k in KINDS}
    ea = {}
    for k in KINDS:
        if use_ea:
            att = AttentionParams(params[f"att.{k}.Wq"], params[f"att.{k}.Wk"])
            ea[k] = attention_edges(attention_matrix(*pairs[k], att), gamma, k)
        else:
            ea[k] = TypedEdgeSet.empty(k, "attention")
    merged = {k: merge_edge_sets(ec[k], ea[k]) for k in KINDS}
    return FinalGraphs(x_hand, x_obj, merged, ec, ea)


def dump_graphs(graphs: FinalGraphs, path: str | os.PathLike) -> None:
    """Debug dump: node feature shapes and per-kind (src, dst, weight) triplets."""
    data = graphs.summary()
    data["triplets"] = {k: g.triplets() for k, g in graphs.graphs.items()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh)
