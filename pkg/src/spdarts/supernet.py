"""Weight-sharing supernet, the discretized finalnet and the classification loss.

One cell: node 0 is the input batch, each intermediate node sums the outputs
of its incoming edges, and the last node feeds an affine classifier head.
Weights live in a flat ``dict[str, ndarray]`` so optimizers and checkpoints
can treat them uniformly; forward passes accept arrays or autodiff nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

from . import autodiff as ad
from .sparse import TemperaturePair, softmax_t_node
from .space import Genotype, SearchSpace

ArrayOrNode = Union[np.ndarray, ad.Node]
Weights = Mapping[str, ArrayOrNode]


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"inputs must be (B, d) with B >= 1, got {x.shape}")
        if y.shape != (x.shape[0],):
            raise ValueError(f"labels shape {y.shape} does not match batch size {x.shape[0]}")
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.inputs.shape[0]


def weight_name(edge: int, tag: str, part: str) -> str:
    return f"edge{edge}.{tag}.{part}"


def init_weights(space: SearchSpace, num_classes: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """uniform(-1/sqrt(d), 1/sqrt(d)) for every affine map, in a fixed draw order."""
    d = space.spec.feature_dim
    bound = 1.0 / np.sqrt(d)
    weights: dict[str, np.ndarray] = {}
    for e in range(space.num_edges):
        for op in space.spec.op_set:
            if op.has_weights:
                weights[weight_name(e, op.tag, "W")] = rng.uniform(-bound, bound, (d, d))
                weights[weight_name(e, op.tag, "b")] = rng.uniform(-bound, bound, d)
    weights["head.W"] = rng.uniform(-bound, bound, (d, num_classes))
    weights["head.b"] = rng.uniform(-bound, bound, num_classes)
    return weights


def apply_op(tag: str, x: ad.Node, W: ArrayOrNode | None = None, b: ArrayOrNode | None = None) -> ad.Node | None:
    """Single candidate operation; ``None`` stands for the zero map."""
    if tag == "none":
        return None
    if tag == "skip":
        return x
    h = ad.bias_add(ad.matmul(x, W), b)
    if tag == "linear":
        return h
    if tag == "gated-linear":
        return ad.tanh(h)
    raise ValueError(f"unknown operation {tag!r}")


def _zeros_like(x: ad.Node) -> ad.Node:
    return ad.Node(np.zeros_like(x.value))


def mixed_edge_forward(x: ArrayOrNode, edge_weights: Mapping[str, tuple], dist: ArrayOrNode,
                       op_tags: tuple[str, ...]) -> ad.Node:
    """sum_m dist[m] * o_m(x) over the candidate ops of one edge.

    ``edge_weights`` maps an op tag to its ``(W, b)`` pair; ``dist`` is a
    length-M distribution (array or 1-D node).
    """
    x = ad.as_node(x)
    dist = ad.as_node(dist)
    if dist.shape != (len(op_tags),):
        raise ad.ShapeError(f"distribution of shape {dist.shape} for {len(op_tags)} operations")
    out = None
    for m, tag in enumerate(op_tags):
        W, b = edge_weights.get(tag, (None, None))
        o = apply_op(tag, x, W, b)
        if o is None:
            continue  # the zero map contributes exactly nothing
        term = ad.scale(o, ad.take(dist, m))
        out = term if out is None else ad.add(out, term)
    return out if out is not None else _zeros_like(x)


def _edge_weights(weights: Weights, space: SearchSpace, edge: int) -> dict[str, tuple]:
    return {
        op.tag: (weights[weight_name(edge, op.tag, "W")], weights[weight_name(edge, op.tag, "b")])
        for op in space.spec.op_set if op.has_weights
    }


def _run_cell(x: ad.Node, space: SearchSpace, edge_fn) -> ad.Node:
    states = [x]
    for node in range(1, space.num_nodes):
        acc = None
        for e in space.incoming(node):
            src = space.edges[e][0]
            out = edge_fn(e, states[src])
            if out is None:
                continue
            acc = out if acc is None else ad.add(acc, out)
        states.append(acc if acc is not None else _zeros_like(x))
    return states[-1]


def _head(h: ad.Node, weights: Weights) -> ad.Node:
    return ad.bias_add(ad.matmul(h, weights["head.W"]), weights["head.b"])


def supernet_forward(batch: Batch, weights: Weights, arch: ArrayOrNode, phi: int,
                     temps: TemperaturePair, space: SearchSpace) -> ad.Node:
    """Logits of the relaxed cell where every edge mixes ops by softmax(A_e / t(phi))."""
    if phi not in (0, 1):
        raise ValueError(f"indicator must be 0 or 1, got {phi}")
    arch = ad.as_node(arch)
    if arch.shape != (space.num_edges, space.num_ops):
        raise ad.ShapeError(f"architecture parameters {arch.shape} for space "
                            f"({space.num_edges}, {space.num_ops})")
    x = ad.Node(batch.inputs)
    t = temps.select(phi)
    tags = space.spec.op_tags

    def edge_fn(e, h):
        dist = softmax_t_node(ad.take(arch, e), t)
        return mixed_edge_forward(h, _edge_weights(weights, space, e), dist, tags)

    return _head(_run_cell(x, space, edge_fn), weights)


def finalnet_forward(batch: Batch, weights: Weights, genotype: Genotype, space: SearchSpace) -> ad.Node:
    """Logits of the discrete cell: each edge applies only its chosen operation."""
    genotype.validate(space)
    x = ad.Node(batch.inputs)
    tags = space.spec.op_tags

    def edge_fn(e, h):
        tag = tags[genotype.choices[e]]
        if tag in ("linear", "gated-linear"):
            return apply_op(tag, h, weights[weight_name(e, tag, "W")], weights[weight_name(e, tag, "b")])
        return apply_op(tag, h)

    return _head(_run_cell(x, space, edge_fn), weights)


def cross_entropy(logits: ad.Node, labels) -> ad.Node:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    logits = ad.as_node(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.value.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ad.ShapeError(f"logits {logits.shape} vs labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError(f"labels must lie in [0, {logits.shape[1]})")
    nll = ad.add(ad.logsumexp(logits), ad.scale(ad.gather(logits, labels), -1.0))
    return ad.mean(nll)


def accuracy(logits, labels) -> float:
    values = logits.value if isinstance(logits, ad.Node) else np.asarray(logits)
    labels = np.asarray(labels)
    return float(np.mean(np.argmax(values, axis=1) == labels))
