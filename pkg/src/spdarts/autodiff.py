"""Minimal define-by-run reverse-mode autodiff over float64 numpy arrays.

Every op builds a fresh :class:`Node` holding its value, the parents it was
computed from, and a closure that pushes the upstream gradient back to
those parents.  :func:`backward` walks the graph in reverse topological
order.  Broadcasting is limited to scalar-with-tensor (``add``/``scale``)
and the explicit ``bias_add`` op used by affine layers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when op inputs have incompatible shapes."""


class NonFiniteError(ValueError):
    """Raised when an op receives (or a checked function returns) NaN/inf."""


OP_KINDS = (
    "leaf", "add", "scale", "mul", "matmul", "bias_add", "exp", "log",
    "relu", "tanh", "sum", "mean", "max", "logsumexp", "take", "gather",
)


class Node:
    __slots__ = ("value", "grad", "op", "parents", "_backward")

    def __init__(self, value, op: str = "leaf", parents: tuple["Node", ...] = (),
                 backward_fn: Callable[[np.ndarray], None] | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.op = op
        self.parents = parents
        self._backward = backward_fn

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Node(op={self.op}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        if isinstance(other, Node) and other.value.ndim > 0 and self.value.ndim > 0:
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, -as_node(other))


def as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def parameter(value) -> Node:
    """Leaf node for a trainable array; input is copied."""
    return Node(np.array(value, dtype=np.float64, copy=True))


def _check_finite(*nodes: Node) -> None:
    for n in nodes:
        if not np.all(np.isfinite(n.value)):
            raise NonFiniteError(f"non-finite input to op (shape {n.shape})")


def _accum(node: Node, g: np.ndarray) -> None:
    node.grad += g


# -- elementwise ---------------------------------------------------------


def add(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_finite(a, b)
    if a.shape != b.shape and a.value.ndim and b.value.ndim:
        raise ShapeError(f"add: {a.shape} vs {b.shape}")

    def bw(g):
        _accum(a, g if a.value.ndim or not b.value.ndim else np.sum(g))
        _accum(b, g if b.value.ndim or not a.value.ndim else np.sum(g))

    return Node(a.value + b.value, "add", (a, b), bw)


def scale(x, c) -> Node:
    """Multiply ``x`` by a python float or a scalar-shaped node."""
    x = as_node(x)
    if isinstance(c, Node):
        if c.value.ndim:
            raise ShapeError(f"scale factor must be scalar, got {c.shape}")
        _check_finite(x, c)

        def bw(g):
            _accum(x, g * c.value)
            _accum(c, np.sum(g * x.value))

        return Node(x.value * c.value, "scale", (x, c), bw)
    c = float(c)
    _check_finite(x)
    if not np.isfinite(c):
        raise NonFiniteError("non-finite scale factor")
    return Node(x.value * c, "scale", (x,), lambda g: _accum(x, g * c))


def mul(a, b) -> Node:
    a, b = as_node(a), as_node(b)
    _check_finite(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: {a.shape} vs {b.shape}")

    def bw(g):
        _accum(a, g * b.value)
        _accum(b, g * a.value)

    return Node(a.value * b.value, "mul", (a, b), bw)


def exp(x) -> Node:
    x = as_node(x)
    _check_finite(x)
    out = np.exp(x.value)
    return Node(out, "exp", (x,), lambda g: _accum(x, g * out))


def log(x) -> Node:
    x = as_node(x)
    _check_finite(x)
    if np.any(x.value <= 0):
        raise NonFiniteError("log of non-positive value")
    return Node(np.log(x.value), "log", (x,), lambda g: _accum(x, g / x.value))


def relu(x) -> Node:
    x = as_node(x)
    _check_finite(x)
    mask = (x.value > 0).astype(np.float64)  # subgradient at 0 is 0
    return Node(x.value * mask, "relu", (x,), lambda g: _accum(x, g * mask))


def tanh(x) -> Node:
    x = as_node(x)
    _check_finite(x)
    out = np.tanh(x.value)
    return Node(out, "tanh", (x,), lambda g: _accum(x, g * (1.0 - out * out)))


# -- linear algebra ------------------------------------------------------


def matmul(a, b) -> Node:
    """``a @ b`` for 2-D ``a`` and 1-D or 2-D ``b`` (matrix-vector / matrix-matrix)."""
    a, b = as_node(a), as_node(b)
    _check_finite(a, b)
    if a.value.ndim != 2 or b.value.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")

    def bw(g):
        if b.value.ndim == 1:
            _accum(a, np.outer(g, b.value))
            _accum(b, a.value.T @ g)
        else:
            _accum(a, g @ b.value.T)
            _accum(b, a.value.T @ g)

    return Node(a.value @ b.value, "matmul", (a, b), bw)


def bias_add(x, bias) -> Node:
    """Add a length-d bias to every row of a (B, d) matrix."""
    x, bias = as_node(x), as_node(bias)
    _check_finite(x, bias)
    if x.value.ndim != 2 or bias.value.ndim != 1 or x.shape[1] != bias.shape[0]:
        raise ShapeError(f"bias_add: {x.shape} + {bias.shape}")

    def bw(g):
        _accum(x, g)
        _accum(bias, g.sum(axis=0))

    return Node(x.value + bias.value, "bias_add", (x, bias), bw)


# -- reductions / indexing -----------------------------------------------


def sum(x) -> Node:  # noqa: A001 - mirrors the op-kind name
    x = as_node(x)
    _check_finite(x)
    return Node(np.sum(x.value), "sum", (x,), lambda g: _accum(x, np.full(x.shape, g)))


def mean(x) -> Node:
    x = as_node(x)
    _check_finite(x)
    n = x.value.size
    return Node(np.mean(x.value), "mean", (x,), lambda g: _accum(x, np.full(x.shape, g / n)))


def max(x) -> Node:  # noqa: A001
    """Max over all entries; the gradient goes to the first maximal entry."""
    x = as_node(x)
    _check_finite(x)
    idx = int(np.argmax(x.value))

    def bw(g):
        d = np.zeros(x.value.size)
        d[idx] = g
        _accum(x, d.reshape(x.shape))

    return Node(x.value.reshape(-1)[idx], "max", (x,), bw)


def logsumexp(x) -> Node:
    """Stable log-sum-exp over the last axis."""
    x = as_node(x)
    _check_finite(x)
    m = np.max(x.value, axis=-1, keepdims=True)
    e = np.exp(x.value - m)
    s = e.sum(axis=-1, keepdims=True)
    soft = e / s
    out = (m + np.log(s))[..., 0]
    return Node(out, "logsumexp", (x,), lambda g: _accum(x, soft * np.expand_dims(g, -1)))


def take(x, index: int) -> Node:
    """Select ``x[index]`` along the first axis (a row or an element)."""
    x = as_node(x)
    if not -x.shape[0] <= index < x.shape[0]:
        raise ShapeError(f"take: index {index} out of range for {x.shape}")

    def bw(g):
        x.grad[index] += g

    return Node(x.value[index], "take", (x,), bw)


def gather(x, indices: Sequence[int]) -> Node:
    """Pick ``x[b, indices[b]]`` for each row of a (B, K) matrix."""
    x = as_node(x)
    idx = np.asarray(indices, dtype=np.int64)
    if x.value.ndim != 2 or idx.shape != (x.shape[0],):
        raise ShapeError(f"gather: {x.shape} with {idx.shape} indices")
    rows = np.arange(x.shape[0])

    def bw(g):
        np.add.at(x.grad, (rows, idx), g)

    return Node(x.value[rows, idx], "gather", (x,), bw)


# -- backward ------------------------------------------------------------


def _topo_order(root: Node) -> list[Node]:
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
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
            if id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Node) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` of every node reachable from ``loss``.

    Gradients accumulate, so reused leaves must be zeroed by the caller
    between passes (see :func:`zero_grad`).  Intermediate nodes are reset here.
    """
    if loss.value.shape != ():
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _topo_order(loss)
    for node in order:
        if node.parents:
            node.grad = np.zeros_like(node.value)
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


def zero_grad(nodes) -> None:
    for n in nodes:
        n.grad = np.zeros_like(n.value)


# -- gradient checking ---------------------------------------------------


@dataclass
class GradReport:
    max_rel_error: float
    errors: list[float] = field(default_factory=list)


def grad_check(f: Callable[[Node], Node], point, eps: float = 1e-5) -> GradReport:
    """Compare backprop gradients of scalar ``f`` at ``point`` with central differences.

    Relative error per coordinate uses ``max(|analytic|, |numeric|, 1e-8)``
    as the denominator.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x0 = np.array(point, dtype=np.float64, copy=True)
    leaf = Node(x0.copy())
    out = f(leaf)
    if not np.isfinite(out.value):
        raise NonFiniteError("f is not finite at the base point")
    backward(out)
    analytic = leaf.grad.reshape(-1).copy()

    def fval(x):
        v = float(f(Node(x)).value)
        if not np.isfinite(v):
            raise NonFiniteError("f is not finite in the eps-neighbourhood")
        return v

    flat = x0.reshape(-1)
    errors = []
    for i in range(flat.size):
        xp = flat.copy()
        xm = flat.copy()
        xp[i] += eps
        xm[i] -= eps
        numeric = (fval(xp.reshape(x0.shape)) - fval(xm.reshape(x0.shape))) / (2 * eps)
        denom = np.max([abs(analytic[i]), abs(numeric), 1e-8])
        errors.append(float(abs(analytic[i] - numeric) / denom))
    return GradReport(max_rel_error=float(np.max(errors)) if errors else 0.0, errors=errors)
