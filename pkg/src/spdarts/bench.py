"""Exhaustive micro-benchmark: every genotype trained standalone from scratch.

The resulting table maps genotype keys to per-seed validation and test
accuracies.  Seeds are derived from ``(run_seed, genotype_key)`` so entries do
not depend on training order, which makes resumed and parallel builds
identical to a serial one.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import autodiff as ad
from .data import Dataset
from .space import (DEFAULT_ENUMERATION_CAP, Genotype, SearchSpace, SearchSpaceSpec, build_space,
                    enumerate_genotypes)
from .supernet import Batch, accuracy, cross_entropy, finalnet_forward, init_weights
from .trainer import MomentumSGD, cosine_lr

BENCH_SCHEMA = {
    "type": "object",
    "required": ["space", "config_digest", "entries"],
    "properties": {
        "space": {"type": "object"},
        "config_digest": {"type": "string"},
        "data_digest": {"type": "string"},
        "train_config": {"type": "object"},
        "entries": {
            "type": "object",
            "patternProperties": {
                r"^\d+(-\d+)*$": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "required": ["val_acc", "test_acc", "seed"],
                        "properties": {
                            "val_acc": {"type": "number", "minimum": 0, "maximum": 1},
                            "test_acc": {"type": "number", "minimum": 0, "maximum": 1},
                            "seed": {"type": "integer", "minimum": 0},
                            "diverged": {"type": "boolean"},
                        },
                    },
                }
            },
            "additionalProperties": False,
        },
    },
}


@dataclass(frozen=True)
class BenchTrainConfig:
    epochs: int = 30
    batch_size: int = 64
    lr: float = 0.05
    lr_min: float = 0.0
    momentum: float = 0.9

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        if not self.lr > 0 or self.lr_min < 0:
            raise ValueError("lr must be positive and lr_min non-negative")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class BenchEntry:
    genotype: str
    val_acc: float
    test_acc: float
    seed: int
    train_seconds: float = field(default=0.0, compare=False)
    diverged: bool = False

    def to_json(self) -> dict:
        d = {"val_acc": self.val_acc, "test_acc": self.test_acc, "seed": self.seed}
        if self.diverged:
            d["diverged"] = True
        return d


@dataclass
class MicroBench:
    space: SearchSpaceSpec
    config_digest: str
    entries: dict[str, list[BenchEntry]]
    data_digest: str = ""
    train_config: BenchTrainConfig = field(default_factory=BenchTrainConfig)

    def mean_val(self, key: str) -> float:
        return float(np.mean([e.val_acc for e in self._get(key)]))

    def mean_test(self, key: str) -> float:
        return float(np.mean([e.test_acc for e in self._get(key)]))

    def _get(self, key: str) -> list[BenchEntry]:
        try:
            return self.entries[key]
        except KeyError:
            raise KeyError(f"genotype {key} is not in the bench") from None

    def to_json(self) -> dict:
        return {
            "space": self.space.to_dict(),
            "config_digest": self.config_digest,
            "data_digest": self.data_digest,
            "train_config": self.train_config.to_dict(),
            "entries": {k: [e.to_json() for e in sorted(v, key=lambda e: e.seed)]
                        for k, v in sorted(self.entries.items())},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "MicroBench":
        entries = {
            k: [BenchEntry(k, float(e["val_acc"]), float(e["test_acc"]), int(e["seed"]),
                           diverged=bool(e.get("diverged", False))) for e in v]
            for k, v in doc["entries"].items()
        }
        return cls(
            space=SearchSpaceSpec.from_dict(doc["space"]),
            config_digest=doc["config_digest"],
            entries=entries,
            data_digest=doc.get("data_digest", ""),
            train_config=BenchTrainConfig(**doc.get("train_config", {})),
        )

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "MicroBench":
        return cls.from_json(json.loads(Path(path).read_text()))


def bench_digest(space: SearchSpaceSpec, train_config: BenchTrainConfig, data_digest: str) -> str:
    blob = json.dumps({"space": space.to_dict(), "train": train_config.to_dict(), "data": data_digest},
                      sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def derive_seed(run_seed: int, key: str) -> int:
    """Stable 63-bit seed from the run seed and a genotype key."""
    h = hashlib.sha256(f"{run_seed}:{key}".encode()).digest()
    return int.from_bytes(h[:8], "little") >> 1


def _evaluate(weights, genotype, space, split: Batch) -> float:
    return accuracy(finalnet_forward(split, weights, genotype, space), split.labels)


def train_genotype(genotype: Genotype, data: Dataset, space: SearchSpace,
                   config: BenchTrainConfig, seed: int) -> BenchEntry:
    """Train a standalone finalnet; report best val accuracy and test accuracy at that epoch."""
    genotype.validate(space)
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    weights = init_weights(space, data.num_classes, rng)
    # only parameters reachable from the chosen ops (plus the head) are trained
    used = {k for k in weights if k.startswith("head.")}
    tags = space.spec.op_tags
    for e, c in enumerate(genotype.choices):
        if tags[c] in ("linear", "gated-linear"):
            used.update({f"edge{e}.{tags[c]}.W", f"edge{e}.{tags[c]}.b"})
    opt = MomentumSGD(config.momentum)
    n = len(data.train)
    b = min(config.batch_size, n)
    best_val, test_at_best = -1.0, 0.0
    try:
        with np.errstate(over="raise", invalid="raise", divide="raise"):
            for epoch in range(config.epochs):
                lr = cosine_lr(epoch, config.epochs, config.lr, config.lr_min)
                order = rng.permutation(n)
                for i in range(n // b):
                    idx = order[i * b:(i + 1) * b]
                    batch = Batch(data.train.inputs[idx], data.train.labels[idx])
                    leaves = {k: ad.Node(v) if k in used else v for k, v in weights.items()}
                    loss = cross_entropy(finalnet_forward(batch, leaves, genotype, space), batch.labels)
                    if not math.isfinite(float(loss.value)):
                        raise FloatingPointError("non-finite loss")
                    ad.backward(loss)
                    opt.step(weights, {k: leaves[k].grad for k in used}, lr)
                val = _evaluate(weights, genotype, space, data.val)
                if val > best_val:
                    best_val = val
                    test_at_best = _evaluate(weights, genotype, space, data.test)
    except (FloatingPointError, ad.NonFiniteError):
        return BenchEntry(genotype.key, 0.0, 0.0, seed, time.perf_counter() - start, diverged=True)
    return BenchEntry(genotype.key, best_val, test_at_best, seed, time.perf_counter() - start)


def _train_task(args) -> BenchEntry:
    genotype, data, space, config, seed = args
    return train_genotype(genotype, data, space, config, seed)


def build_bench(space: SearchSpace, data: Dataset, config: BenchTrainConfig, seeds: Iterable[int],
                *, existing: MicroBench | None = None, jobs: int = 1,
                cap: int = DEFAULT_ENUMERATION_CAP,
                on_entry: Callable[[MicroBench, BenchEntry], None] | None = None) -> MicroBench:
    """Train every genotype for every run seed, skipping (key, seed) pairs already present.

    ``on_entry`` is called after each merged entry (e.g. to flush a partial file).
    """
    genotypes = enumerate_genotypes(space, cap)
    digest = bench_digest(space.spec, config, data.digest)
    if existing is not None and existing.config_digest != digest:
        raise ValueError("existing bench was built with a different space, data or training config")
    bench = MicroBench(space.spec, digest, {}, data.digest, config)
    if existing is not None:
        bench.entries = {k: list(v) for k, v in existing.entries.items()}

    todo = []
    for g in genotypes:
        have = {e.seed for e in bench.entries.get(g.key, [])}
        for run_seed in seeds:
            s = derive_seed(run_seed, g.key)
            if s not in have:
                todo.append((g, data, space, config, s))

    def merge(entry: BenchEntry) -> None:
        bench.entries.setdefault(entry.genotype, []).append(entry)
        if on_entry is not None:
            on_entry(bench, entry)

    if jobs <= 1:
        for task in todo:
            merge(_train_task(task))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for entry in pool.map(_train_task, todo, chunksize=max(1, len(todo) // (4 * jobs))):
                merge(entry)
    return bench


def percentile_of(bench: MicroBench, key: str) -> float:
    """Fraction of bench genotypes with strictly lower mean validation accuracy."""
    target = bench.mean_val(key)
    vals = [bench.mean_val(k) for k in bench.entries]
    return sum(v < target for v in vals) / len(vals)


def regret(bench: MicroBench, key: str) -> float:
    """Best mean test accuracy in the bench minus this genotype's mean test accuracy."""
    target = bench.mean_test(key)
    best = max(bench.mean_test(k) for k in bench.entries)
    return best - target
