"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A `Tensor` records the primitive that produced it and its parents. `backward`
walks the graph in reverse topological order, applying the registered
vector-Jacobian rule of every primitive. Rules live in `RULES`, keyed by
primitive name, so tests can swap one out (see `override_rule`).
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

RULES: dict[str, Callable] = {}


def rule(name: str):
    def register(fn):
        RULES[name] = fn
        return fn
    return register


class Tensor:
    __slots__ = ("value", "grad", "parents", "op", "ctx", "requires_grad")
    __array_priority__ = 100  # make ndarray <op> Tensor defer to Tensor

    def __init__(self, value, requires_grad: bool = False, parents: tuple = (), op: str = "leaf", ctx=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = parents
        self.op = op
        self.ctx = ctx
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return index(self, key)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, op: str, parents: Sequence[Tensor], ctx=None) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(value, requires_grad=req, parents=tuple(parents) if req else (), op=op, ctx=ctx)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ------------------------------------------------------------------ primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value + b.value, "add", (a, b))


@rule("add")
def _add_vjp(node, g):
    a, b = node.parents
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value - b.value, "sub", (a, b))


@rule("sub")
def _sub_vjp(node, g):
    a, b = node.parents
    return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)


def mul(a, b) -> Tensor:
    """Elementwise product with numpy broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value * b.value, "mul", (a, b))


@rule("mul")
def _mul_vjp(node, g):
    a, b = node.parents
    return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value @ b.value, "matmul", (a, b))


@rule("matmul")
def _matmul_vjp(node, g):
    a, b = node.parents
    return g @ b.value.T, a.value.T @ g


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.value.T, "transpose", (a,))


@rule("transpose")
def _transpose_vjp(node, g):
    return (g.T,)


def relu(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.maximum(a.value, 0.0), "relu", (a,))


@rule("relu")
def _relu_vjp(node, g):
    # subgradient 0 at exactly 0
    return (g * (node.parents[0].value > 0.0),)


def softmax_rows(a) -> Tensor:
    """Row-wise softmax with max subtraction."""
    a = as_tensor(a)
    z = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    return _node(e / e.sum(axis=1, keepdims=True), "softmax_rows", (a,))


@rule("softmax_rows")
def _softmax_vjp(node, g):
    s = node.value
    return (s * (g - (g * s).sum(axis=1, keepdims=True)),)


def concat(items: Sequence, axis: int = 1) -> Tensor:
    items = [as_tensor(t) for t in items]
    sizes = [t.shape[axis] for t in items]
    return _node(np.concatenate([t.value for t in items], axis=axis), "concat", items, ctx=(axis, sizes))


@rule("concat")
def _concat_vjp(node, g):
    axis, sizes = node.ctx
    return tuple(np.split(g, np.cumsum(sizes)[:-1], axis=axis))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.value.reshape(shape), "reshape", (a,))


@rule("reshape")
def _reshape_vjp(node, g):
    return (g.reshape(node.parents[0].shape),)


def index(a, key) -> Tensor:
    """Basic or integer-array indexing (slices, row gathers)."""
    a = as_tensor(a)
    return _node(a.value[key], "index", (a,), ctx=key)


@rule("index")
def _index_vjp(node, g):
    a = node.parents[0]
    out = np.zeros_like(a.value)
    np.add.at(out, node.ctx, g)
    return (out,)


def gather(a, rows, cols) -> Tensor:
    """Elements a[rows[k], cols[k]] as a vector."""
    a = as_tensor(a)
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    return _node(a.value[rows, cols], "gather", (a,), ctx=(rows, cols))


@rule("gather")
def _gather_vjp(node, g):
    rows, cols = node.ctx
    out = np.zeros_like(node.parents[0].value)
    np.add.at(out, (rows, cols), g)
    return (out,)


def scatter_add(values, positions, size: int) -> Tensor:
    """out[positions[k]] += values[k] into a zero vector of length `size`."""
    values = as_tensor(values)
    positions = np.asarray(positions, dtype=np.int64)
    out = np.zeros(size)
    np.add.at(out, positions, values.value)
    return _node(out, "scatter_add", (values,), ctx=positions)


@rule("scatter_add")
def _scatter_vjp(node, g):
    return (g[node.ctx],)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    return _node(a.value.sum(axis=axis, keepdims=keepdims), "sum", (a,), ctx=(axis, keepdims))


@rule("sum")
def _sum_vjp(node, g):
    axis, keepdims = node.ctx
    a = node.parents[0]
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape).copy(),)


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    n = a.value.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis), 1.0 / n)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.sqrt(a.value), "sqrt", (a,))


@rule("sqrt")
def _sqrt_vjp(node, g):
    return (g / (2.0 * node.value),)


def sqnorm_rows(a) -> Tensor:
    """Squared Euclidean norm of every row, shape (n,)."""
    a = as_tensor(a)
    return _node(np.einsum("ij,ij->i", a.value, a.value), "sqnorm_rows", (a,))


@rule("sqnorm_rows")
def _sqnorm_vjp(node, g):
    return (2.0 * node.parents[0].value * g[:, None],)


def min(a, axis: int) -> Tensor:  # noqa: A001
    """Minimum along `axis`; the gradient flows to the first (lowest-index) argmin."""
    a = as_tensor(a)
    arg = np.argmin(a.value, axis=axis)
    return _node(np.take_along_axis(a.value, np.expand_dims(arg, axis), axis).squeeze(axis),
                 "min", (a,), ctx=(axis, arg))


@rule("min")
def _min_vjp(node, g):
    axis, arg = node.ctx
    out = np.zeros_like(node.parents[0].value)
    np.put_along_axis(out, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis)
    return (out,)


def pairwise_sqdist(p, q) -> Tensor:
    """D[i, j] = ||p_i - q_j||^2 for point sets p (n, 3) and q (m, 3)."""
    p, q = as_tensor(p), as_tensor(q)
    diff = p.value[:, None, :] - q.value[None, :, :]
    return _node(np.einsum("ijk,ijk->ij", diff, diff), "pairwise_sqdist", (p, q))


@rule("pairwise_sqdist")
def _pairwise_vjp(node, g):
    p, q = node.parents
    gp = 2.0 * (g.sum(axis=1)[:, None] * p.value - g @ q.value)
    gq = 2.0 * (g.sum(axis=0)[:, None] * q.value - g.T @ p.value)
    return gp, gq


def spmm(src, dst, weights, x, n_out: int) -> Tensor:
    """Weighted edge sum: out[dst[k]] += weights[k] * x[src[k]].

    Equivalent to M @ x with M[dst, src] = weights; `weights` may carry gradient.
    """
    weights, x = as_tensor(weights), as_tensor(x)
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    m = sp.csr_matrix((weights.value, (dst, src)), shape=(n_out, x.shape[0]))
    return _node(m @ x.value, "spmm", (weights, x), ctx=(src, dst, m))


@rule("spmm")
def _spmm_vjp(node, g):
    src, dst, m = node.ctx
    weights, x = node.parents
    gw = None
    if weights.requires_grad:
        if m.shape[0] * m.shape[1] <= 4 * len(src):
            # dense-ish edge set: one BLAS product, then sample the edges
            gw = (g @ x.value.T)[dst, src]
        else:
            gw = np.einsum("ij,ij->i", g[dst], x.value[src])
    gx = m.T @ g if x.requires_grad else None
    return gw, gx


# -------------------------------------------------------------------- backward


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(node) into `.grad` of every reachable node that
    requires gradient. Accumulators are reset first."""
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node.grad is None:
            node.grad = np.zeros_like(node.value)
        if not node.parents:
            continue
        grads = RULES[node.op](node, node.grad)
        for parent, g in zip(node.parents, grads):
            if parent.requires_grad and g is not None:
                g = np.asarray(g, dtype=np.float64).reshape(parent.value.shape)
                # first contribution is stored as a private copy, later ones accumulate
                parent.grad = g.copy() if parent.grad is None else parent.grad + g


def grad(loss: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    backward(loss)
    return {k: (p.grad if p.grad is not None else np.zeros_like(p.value)) for k, p in params.items()}


@contextlib.contextmanager
def override_rule(name: str, fn: Callable):
    """Temporarily replace the backward rule of one primitive."""
    saved = RULES[name]
    RULES[name] = fn
    try:
        yield
    finally:
        RULES[name] = saved


def scaled_rule(name: str, factor: float) -> Callable:
    """A deliberately wrong rule: the genuine one scaled by `factor`."""
    base = RULES[name]

    def wrong(node, g):
        return tuple(None if r is None else factor * r for r in base(node, g))
    return wrong


def parameters(values: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=True) for k, v in values.items()}


def check_primitive(fn: Callable, inputs: Iterable[np.ndarray], step: float = 1e-5,
                    rng: np.random.Generator | None = None) -> float:
    """Max relative error between reverse-mode and central-difference gradients
    of sum(fn(*inputs) * R) for a fixed random projection R."""
    rng = rng or np.random.default_rng(0)
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    out = fn(*[Tensor(x) for x in inputs])
    proj = rng.normal(size=out.shape)

    def objective(*xs):
        return float((fn(*[Tensor(x) for x in xs]).value * proj).sum())

    leaves = [Tensor(x, requires_grad=True) for x in inputs]
    backward(sum(mul(fn(*leaves), proj)))
    worst = 0.0
    for k, x in enumerate(inputs):
        fd = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            xp = [y.copy() for y in inputs]
            xm = [y.copy() for y in inputs]
            xp[k][idx] += step
            xm[k][idx] -= step
            fd[idx] = (objective(*xp) - objective(*xm)) / (2 * step)
        analytic = leaves[k].grad
        scale = np.maximum(np.abs(fd), np.abs(analytic)).max()
        if scale == 0:
            continue
        worst = max(worst, float(np.abs(fd - analytic).max() / scale))
    return worst
