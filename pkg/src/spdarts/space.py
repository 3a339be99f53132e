"""Cell search spaces, genotypes and argmax discretization."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

OP_TAGS = ("none", "skip", "linear", "gated-linear")
WEIGHTED_OPS = frozenset({"linear", "gated-linear"})
DEFAULT_ENUMERATION_CAP = 4096
INPUT_NODES = 1


class EnumerationCapError(ValueError):
    def __init__(self, count: int, cap: int):
        super().__init__(f"space has {count} genotypes, above the enumeration cap of {cap}")
        self.count = count
        self.cap = cap


@dataclass(frozen=True)
class OperationKind:
    tag: str

    def __post_init__(self):
        if self.tag not in OP_TAGS:
            raise ValueError(f"unknown operation {self.tag!r}; expected one of {OP_TAGS}")

    @property
    def has_weights(self) -> bool:
        return self.tag in WEIGHTED_OPS


@dataclass(frozen=True)
class SearchSpaceSpec:
    num_intermediate_nodes: int
    feature_dim: int
    op_set: tuple[OperationKind, ...] = tuple(OperationKind(t) for t in OP_TAGS)
    include_none: bool = True

    def __post_init__(self):
        ops = tuple(o if isinstance(o, OperationKind) else OperationKind(o) for o in self.op_set)
        object.__setattr__(self, "op_set", ops)
        if self.num_intermediate_nodes < 1:
            raise ValueError("num_intermediate_nodes must be positive")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be positive")
        if len(ops) < 2:
            raise ValueError("op_set needs at least two operations")
        if len({o.tag for o in ops}) != len(ops):
            raise ValueError("op_set has duplicate operations")
        if not self.include_none and any(o.tag == "none" for o in ops):
            raise ValueError("include_none is false but op_set contains 'none'")

    @property
    def op_tags(self) -> tuple[str, ...]:
        return tuple(o.tag for o in self.op_set)

    def to_dict(self) -> dict:
        return {
            "num_intermediate_nodes": self.num_intermediate_nodes,
            "feature_dim": self.feature_dim,
            "op_set": list(self.op_tags),
            "include_none": self.include_none,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpaceSpec":
        include_none = bool(d.get("include_none", True))
        ops = d.get("op_set")
        if ops is None:
            ops = [t for t in OP_TAGS if include_none or t != "none"]
        return cls(
            num_intermediate_nodes=int(d["num_intermediate_nodes"]),
            feature_dim=int(d["feature_dim"]),
            op_set=tuple(OperationKind(t) for t in ops),
            include_none=include_none,
        )


@dataclass(frozen=True)
class SearchSpace:
    spec: SearchSpaceSpec
    edges: tuple[tuple[int, int], ...] = field(default=())

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_ops(self) -> int:
        return len(self.spec.op_set)

    @property
    def num_nodes(self) -> int:
        return INPUT_NODES + self.spec.num_intermediate_nodes

    @property
    def size(self) -> int:
        return self.num_ops ** self.num_edges

    def incoming(self, node: int) -> list[int]:
        """Edge indices that feed ``node``."""
        return [e for e, (_, dst) in enumerate(self.edges) if dst == node]


@dataclass(frozen=True)
class Genotype:
    choices: tuple[int, ...]

    @property
    def key(self) -> str:
        return "-".join(str(c) for c in self.choices)

    @classmethod
    def from_key(cls, key: str) -> "Genotype":
        try:
            return cls(tuple(int(p) for p in key.split("-")))
        except ValueError:
            raise ValueError(f"malformed genotype key {key!r}") from None

    def validate(self, space: SearchSpace) -> None:
        if len(self.choices) != space.num_edges:
            raise ValueError(
                f"genotype {self.key} has {len(self.choices)} choices, space has {space.num_edges} edges")
        for c in self.choices:
            if not 0 <= c < space.num_ops:
                raise ValueError(f"genotype {self.key}: op index {c} outside [0, {space.num_ops})")

    def __str__(self) -> str:
        return self.key


def build_space(spec: SearchSpaceSpec) -> SearchSpace:
    # every intermediate node j takes an edge from each predecessor i < j
    edges = tuple(
        (src, dst)
        for dst in range(INPUT_NODES, INPUT_NODES + spec.num_intermediate_nodes)
        for src in range(dst)
    )
    return SearchSpace(spec=spec, edges=edges)


def enumerate_genotypes(space: SearchSpace, cap: int = DEFAULT_ENUMERATION_CAP) -> list[Genotype]:
    count = space.size
    if count > cap:
        raise EnumerationCapError(count, cap)
    return [Genotype(c) for c in itertools.product(range(space.num_ops), repeat=space.num_edges)]


def init_arch_params(space: SearchSpace) -> np.ndarray:
    return np.zeros((space.num_edges, space.num_ops))


def discretize(params: np.ndarray, space: SearchSpace | None = None) -> Genotype:
    """Keep the largest-parameter operation on every edge (ties -> lowest index)."""
    A = np.asarray(params, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"architecture parameters must be 2-D, got shape {A.shape}")
    if space is not None and A.shape != (space.num_edges, space.num_ops):
        raise ValueError(f"parameters {A.shape} do not match space ({space.num_edges}, {space.num_ops})")
    return Genotype(tuple(int(i) for i in np.argmax(A, axis=1)))


def genotype_ops(genotype: Genotype, space: SearchSpace) -> list[str]:
    return [space.spec.op_tags[c] for c in genotype.choices]


def all_op_genotype(space: SearchSpace, tag: str) -> Genotype:
    idx = space.spec.op_tags.index(tag)
    return Genotype((idx,) * space.num_edges)

