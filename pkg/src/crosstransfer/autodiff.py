"""Dense float64 reverse-mode automatic differentiation.

A `Node` wraps a numpy array plus the local backward rules linking it to its
parents.  Graphs are built eagerly by the op functions below, stay acyclic by
construction, and are differentiated by `backward` on a scalar node.  Values
are validated finite at every node: NaN/Inf anywhere is raised immediately,
never propagated.

A graph must stay on the thread that built it until `backward` returns;
the wrapped arrays are treated as immutable and may be shared read-only.
"""

from __future__ import annotations

import builtins

import numpy as np
from scipy.special import expit, xlogy

# Probabilities are clamped to this range before any log.
PROB_EPS = 1e-7


def as_array(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    return arr


class Node:
    """One vertex of a differentiation graph.

    `parents` holds (parent, vjp) pairs where vjp maps the upstream gradient
    of this node to the gradient contribution for that parent.  `grad` is
    lazily allocated by `backward` and accumulates across calls until cleared.
    """

    __slots__ = ("value", "grad", "parents", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, parents=(), name: str | None = None):
        arr = as_array(value)
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(
                f"non-finite value entering graph node {name or '<anonymous>'}"
            )
        self.value = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        # Parents of a non-differentiable node are dead weight; drop them.
        self.parents = tuple(parents) if self.requires_grad else ()
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def gradient(self) -> np.ndarray:
        """Accumulated gradient, or zeros if this node was never reached."""
        if self.grad is None:
            return np.zeros_like(self.value)
        return self.grad

    def zero_grad(self):
        self.grad = None

    def sum(self) -> "Node":
        return sum_all(self)

    def mean(self) -> "Node":
        return mean_all(self)

    def __add__(self, other):
        return add(self, wrap(other))

    def __radd__(self, other):
        return add(wrap(other), self)

    def __sub__(self, other):
        return add(self, neg(wrap(other)))

    def __rsub__(self, other):
        return add(wrap(other), neg(self))

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, wrap(other))

    def __rmul__(self, other):
        return mul(wrap(other), self)

    def __matmul__(self, other):
        return matmul(self, wrap(other))

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Node(shape={self.value.shape}, requires_grad={self.requires_grad}{tag})"


def wrap(x) -> Node:
    """Coerce a constant to a non-differentiable Node (Nodes pass through)."""
    if isinstance(x, Node):
        return x
    return Node(x)


def parameter(value, name: str) -> Node:
    """A named leaf that accumulates gradients."""
    return Node(value, requires_grad=True, name=name)


def _make(value, parents, name=None) -> Node:
    rg = builtins.any(p.requires_grad for p, _ in parents)
    return Node(value, requires_grad=rg, parents=parents, name=name)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a: Node, b: Node) -> Node:
    a, b = wrap(a), wrap(b)
    try:
        value = a.value + b.value
    except ValueError:
        raise ValueError(f"add: incompatible shapes {a.shape} and {b.shape}") from None
    return _make(value, (
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    ))


def neg(a: Node) -> Node:
    a = wrap(a)
    return _make(-a.value, ((a, lambda g: -g),))


def mul(a: Node, b: Node) -> Node:
    a, b = wrap(a), wrap(b)
    try:
        value = a.value * b.value
    except ValueError:
        raise ValueError(f"mul: incompatible shapes {a.shape} and {b.shape}") from None
    return _make(value, (
        (a, lambda g: _unbroadcast(g * b.value, a.shape)),
        (b, lambda g: _unbroadcast(g * a.value, b.shape)),
    ))


def matmul(a: Node, b: Node) -> Node:
    a, b = wrap(a), wrap(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _make(a.value @ b.value, (
        (a, lambda g: g @ b.value.T),
        (b, lambda g: a.value.T @ g),
    ))


def relu(x: Node) -> Node:
    x = wrap(x)
    keep = x.value > 0
    return _make(np.where(keep, x.value, 0.0), ((x, lambda g: g * keep),))


def sigmoid(x: Node) -> Node:
    x = wrap(x)
    s = expit(x.value)
    return _make(s, ((x, lambda g: g * s * (1.0 - s)),))


def tanh(x: Node) -> Node:
    x = wrap(x)
    t = np.tanh(x.value)
    return _make(t, ((x, lambda g: g * (1.0 - t * t)),))


def concat(nodes, axis: int = -1) -> Node:
    nodes = [wrap(n) for n in nodes]
    if not nodes:
        raise ValueError("concat: need at least one operand")
    ndim = nodes[0].value.ndim
    ax = axis if axis >= 0 else ndim + axis
    for n in nodes[1:]:
        if n.value.ndim != ndim or (
            n.shape[:ax] + n.shape[ax + 1:] != nodes[0].shape[:ax] + nodes[0].shape[ax + 1:]
        ):
            raise ValueError(
                f"concat: incompatible shapes {nodes[0].shape} and {n.shape} on axis {axis}"
            )
    value = np.concatenate([n.value for n in nodes], axis=ax)
    sizes = [n.shape[ax] for n in nodes]
    offsets = np.cumsum([0] + sizes)

    def vjp_for(i):
        lo, hi = offsets[i], offsets[i + 1]
        index = tuple([slice(None)] * ax + [slice(lo, hi)])
        return lambda g: g[index]

    return _make(value, tuple((n, vjp_for(i)) for i, n in enumerate(nodes)))


def sum_all(x: Node) -> Node:
    x = wrap(x)
    return _make(np.sum(x.value), ((x, lambda g: np.ones_like(x.value) * g),))


def mean_all(x: Node) -> Node:
    x = wrap(x)
    n = x.value.size
    return _make(np.mean(x.value), ((x, lambda g: np.ones_like(x.value) * (g / n)),))


def stop_gradient(x: Node) -> Node:
    """Forward no-op (shares the value array), absolute backward barrier."""
    x = wrap(x)
    return Node(x.value, requires_grad=False, name=x.name)


# ---------------------------------------------------------------------------
# model-facing ops


def gather_rows(table: Node, ids) -> Node:
    """Rows of a [N, d] table at integer ids ([B] or [B, L]); scatter-add backward."""
    table = wrap(table)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise TypeError(f"gather_rows: ids must be integers, got dtype {ids.dtype}")
    n = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        bad = ids[(ids < 0) | (ids >= n)][0]
        raise IndexError(f"gather_rows: id {bad} outside table of {n} rows")

    def vjp(g):
        out = np.zeros_like(table.value)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return out

    return _make(table.value[ids], ((table, vjp),))


def batched_dot(seq: Node, query: Node) -> Node:
    """out[b, l] = seq[b, l, :] . query[b, :]."""
    seq, query = wrap(seq), wrap(query)
    if seq.value.ndim != 3 or query.value.ndim != 2 or seq.shape[::2] != query.shape:
        raise ValueError(f"batched_dot: incompatible shapes {seq.shape} and {query.shape}")
    value = np.einsum("bld,bd->bl", seq.value, query.value)
    return _make(value, (
        (seq, lambda g: g[:, :, None] * query.value[:, None, :]),
        (query, lambda g: np.einsum("bl,bld->bd", g, seq.value)),
    ))


def masked_softmax(logits: Node, mask) -> Node:
    """Row softmax over positions where mask is True; masked entries are 0.

    Rows with no valid position come out all-zero.
    """
    logits = wrap(logits)
    if isinstance(mask, Node):
        raise TypeError("masked_softmax: mask must be a plain array, not a Node")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != logits.shape:
        raise ValueError(f"masked_softmax: mask shape {mask.shape} != logits {logits.shape}")
    rowmax = np.max(np.where(mask, logits.value, -np.inf), axis=-1, keepdims=True)
    rowmax = np.where(np.isfinite(rowmax), rowmax, 0.0)
    e = np.where(mask, np.exp(logits.value - rowmax), 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    s = np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)

    def vjp(g):
        return s * (g - np.sum(g * s, axis=-1, keepdims=True))

    return _make(s, ((logits, vjp),))


def weighted_sum(weights: Node, seq: Node) -> Node:
    """out[b, :] = sum_l weights[b, l] * seq[b, l, :]."""
    weights, seq = wrap(weights), wrap(seq)
    if seq.value.ndim != 3 or weights.value.ndim != 2 or seq.shape[:2] != weights.shape:
        raise ValueError(f"weighted_sum: incompatible shapes {weights.shape} and {seq.shape}")
    value = np.einsum("bl,bld->bd", weights.value, seq.value)
    return _make(value, (
        (weights, lambda g: np.einsum("bd,bld->bl", g, seq.value)),
        (seq, lambda g: weights.value[:, :, None] * g[:, None, :]),
    ))


def cosine_similarity(u: Node, v: Node) -> Node:
    """Row-wise cosine of [B, d] (or [d]) inputs; zero-norm rows are an error."""
    u, v = wrap(u), wrap(v)
    squeeze = u.value.ndim == 1
    uv = u.value.reshape(1, -1) if squeeze else u.value
    vv = v.value.reshape(1, -1) if squeeze else v.value
    if uv.shape != vv.shape or uv.ndim != 2:
        raise ValueError(f"cosine_similarity: incompatible shapes {u.shape} and {v.shape}")
    nu = np.linalg.norm(uv, axis=1)
    nv = np.linalg.norm(vv, axis=1)
    if np.any(nu == 0.0) or np.any(nv == 0.0):
        row = int(np.argmax((nu == 0.0) | (nv == 0.0)))
        raise ValueError(f"cosine_similarity: zero-norm vector at row {row}")
    c = np.einsum("bd,bd->b", uv, vv) / (nu * nv)

    def vjp_u(g):
        g2 = g.reshape(-1)
        out = g2[:, None] * (vv / (nu * nv)[:, None] - c[:, None] * uv / (nu * nu)[:, None])
        return out.reshape(u.shape) if squeeze else out

    def vjp_v(g):
        g2 = g.reshape(-1)
        out = g2[:, None] * (uv / (nu * nv)[:, None] - c[:, None] * vv / (nv * nv)[:, None])
        return out.reshape(v.shape) if squeeze else out

    value = c[0] if squeeze else c
    return _make(value, ((u, vjp_u), (v, vjp_v)))


def binary_cross_entropy(p: Node, y) -> Node:
    """Per-element -[y ln p + (1-y) ln(1-p)] with p clamped to [1e-7, 1-1e-7].

    `p` must already be a probability; values outside [0, 1] are a contract
    violation, not something to clamp away.
    """
    p = wrap(p)
    y = as_array(y)
    if y.shape != p.shape:
        raise ValueError(f"binary_cross_entropy: labels shape {y.shape} != preds {p.shape}")
    if np.any((y != 0.0) & (y != 1.0)):
        raise ValueError("binary_cross_entropy: labels must be 0 or 1")
    if np.any(p.value < 0.0) or np.any(p.value > 1.0):
        raise ValueError("binary_cross_entropy: probability outside [0, 1]")
    ph = np.clip(p.value, PROB_EPS, 1.0 - PROB_EPS)
    value = -(y * np.log(ph) + (1.0 - y) * np.log1p(-ph))
    interior = (p.value > PROB_EPS) & (p.value < 1.0 - PROB_EPS)

    def vjp(g):
        return g * np.where(interior, (ph - y) / (ph * (1.0 - ph)), 0.0)

    return _make(value, ((p, vjp),))


def binary_entropy(p):
    """H(p) = -p ln p - (1-p) ln(1-p) with 0 ln 0 = 0; plain numpy, no graph."""
    p = as_array(p)
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("binary_entropy: probability outside [0, 1]")
    return -(xlogy(p, p) + xlogy(1.0 - p, 1.0 - p))


# ---------------------------------------------------------------------------
# reverse pass


def backward(loss: Node) -> None:
    """Accumulate dLoss/dNode into .grad of every reachable requires_grad node.

    Repeated calls without zeroing keep accumulating.  The loss must be scalar.
    """
    if not isinstance(loss, Node):
        raise TypeError("backward: loss must be a Node")
    if loss.value.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))

    upstream: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = upstream.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        for parent, vjp in node.parents:
            if not parent.requires_grad:
                continue
            pg = vjp(g)
            pid = id(parent)
            if pid in upstream:
                upstream[pid] = upstream[pid] + pg
            else:
                upstream[pid] = pg


def zero_grads(nodes) -> None:
    for n in nodes:
        n.zero_grad()
