"""Batch-mixed bilevel search loop with per-epoch diagnostics.

Each epoch draws one Bernoulli indicator per mini-batch.  For every batch the
shared weights take an SGD step on the training loss and the architecture
parameters take an Adam step on the validation loss, both under the softmax
temperature picked by that batch's indicator.  ``mode="smooth-only"`` never
uses the sparse temperature and reduces to first-order DARTS.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import container
from .data import Dataset
from .space import SearchSpace, SearchSpaceSpec, build_space, discretize, init_arch_params
from .sparse import (MixPlan, TemperaturePair, clamp_probability, ies, p_schedule,
                     sample_indicators)
from .supernet import Batch, accuracy, cross_entropy, finalnet_forward, init_weights, supernet_forward

log = logging.getLogger(__name__)

MODES = ("sp-darts", "smooth-only")
CHECKPOINT_MAGIC = b"SPDARTS1"
METRICS_HEADER = ("epoch", "p", "ies", "train_loss", "val_loss",
                  "supernet_val_acc", "discretized_val_acc", "genotype")
_INIT_STREAM = 1
_SHUFFLE_STREAM = 2


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, batch: int, what: str = "loss"):
        super().__init__(f"non-finite {what} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


@dataclass(frozen=True)
class SearchConfig:
    epochs: int = 50
    batch_size: int = 64
    weight_lr: float = 0.05
    weight_lr_min: float = 0.05
    weight_momentum: float = 0.9
    param_lr: float = 3e-4
    param_decay: float = 0.0
    t_sp: float = 1e-3
    t_sm: float = 1e-2
    p_low: float = 0.0
    p_up: float = 1.0
    warmup_epochs: int = 1
    seed: int = 0
    mode: str = "sp-darts"
    ies_temperature: float = 1.0
    space: SearchSpaceSpec = field(default_factory=lambda: SearchSpaceSpec(3, 8))
    name: str = ""

    def __post_init__(self):
        for f in ("epochs", "batch_size"):
            if getattr(self, f) < 1:
                raise ConfigError(f, "must be >= 1")
        for f in ("weight_lr", "param_lr"):
            if not getattr(self, f) > 0:
                raise ConfigError(f, "learning rate must be positive")
        if self.weight_lr_min < 0:
            raise ConfigError("weight_lr_min", "must be non-negative")
        if not 0 <= self.weight_momentum < 1:
            raise ConfigError("weight_momentum", "must lie in [0, 1)")
        if self.param_decay < 0:
            raise ConfigError("param_decay", "must be non-negative")
        if self.mode not in MODES:
            raise ConfigError("mode", f"must be one of {MODES}")
        if not self.ies_temperature > 0:
            raise ConfigError("ies_temperature", "must be positive")
        for f, build in (("t_sp", lambda: self.temps), ("p_up", lambda: self.mix)):
            try:
                build()
            except ValueError as exc:
                raise ConfigError(f, str(exc)) from None

    @property
    def temps(self) -> TemperaturePair:
        return TemperaturePair(self.t_sp, self.t_sm)

    @property
    def mix(self) -> MixPlan:
        return MixPlan(self.p_low, self.p_up, self.epochs, self.warmup_epochs)

    @property
    def method(self) -> str:
        return self.name or self.mode

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["space"] = self.space.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SearchConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown config field")
        kwargs = dict(d)
        if "space" in kwargs:
            try:
                kwargs["space"] = SearchSpaceSpec.from_dict(kwargs["space"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError("space", str(exc)) from None
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for k, v in kwargs.items():
            if k == "space":
                continue
            want = types[k]
            if want == "int" and not (isinstance(v, int) and not isinstance(v, bool)):
                raise ConfigError(k, f"expected an integer, got {v!r}")
            if want == "float" and not (isinstance(v, (int, float)) and not isinstance(v, bool)):
                raise ConfigError(k, f"expected a number, got {v!r}")
            if want == "str" and not isinstance(v, str):
                raise ConfigError(k, f"expected a string, got {v!r}")
        return cls(**kwargs)

    def digest(self, include_seed: bool = True) -> str:
        d = self.to_dict()
        if not include_seed:
            d.pop("seed")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class MetricsRow:
    epoch: int
    p: float
    ies: float
    train_loss: float
    val_loss: float
    supernet_val_acc: float
    discretized_val_acc: float
    genotype: str

    def as_csv_row(self) -> list[str]:
        return [str(self.epoch), repr(self.p), repr(self.ies), repr(self.train_loss),
                repr(self.val_loss), repr(self.supernet_val_acc), repr(self.discretized_val_acc),
                self.genotype]


@dataclass
class SearchResult:
    genotype: str
    metrics: list[MetricsRow]
    arch_params: np.ndarray
    weights: dict[str, np.ndarray]
    config: SearchConfig
    branch_counts: dict[str, int]

    @property
    def final_ies(self) -> float:
        return self.metrics[-1].ies


# -- optimizers ----------------------------------------------------------


def cosine_lr(epoch: int, total_epochs: int, lr_max: float, lr_min: float) -> float:
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * epoch / total_epochs))


def _check_grads(grads: dict[str, np.ndarray]) -> None:
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {k}")


class MomentumSGD:
    """Heavy-ball SGD (``v = mu*v + g; w -= lr*v``), updating arrays in place."""

    def __init__(self, momentum: float = 0.9):
        self.momentum = momentum
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        _check_grads(grads)
        for k, g in grads.items():
            v = self.velocity.get(k)
            v = g.copy() if v is None else self.momentum * v + g
            self.velocity[k] = v
            params[k] -= lr * v


class Adam:
    """Adam with bias correction and decoupled weight decay."""

    def __init__(self, lr: float, betas=(0.5, 0.999), eps: float = 1e-8, decay: float = 0.0):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.decay = decay
        self.t = 0
        self.m: np.ndarray | None = None
        self.v: np.ndarray | None = None

    def step(self, param: np.ndarray, grad: np.ndarray) -> None:
        _check_grads({"arch": grad})
        if self.m is None:
            self.m = np.zeros_like(param)
            self.v = np.zeros_like(param)
        self.t += 1
        if self.decay:
            param -= self.lr * self.decay * param
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def weight_step(weights: dict[str, np.ndarray], grads: dict[str, np.ndarray], epoch: int,
                config: SearchConfig, opt: MomentumSGD) -> float:
    """One cosine-annealed momentum-SGD step on the shared weights; returns the lr used."""
    lr = cosine_lr(epoch, config.epochs, config.weight_lr, config.weight_lr_min)
    opt.step(weights, grads, lr)
    return lr


def param_step(arch: np.ndarray, grad: np.ndarray, opt: Adam) -> None:
    opt.step(arch, grad)


# -- evaluation ----------------------------------------------------------


def evaluate_supernet(weights, arch, space: SearchSpace, data: Batch, temps: TemperaturePair,
                      phi: int = 0) -> tuple[float, float]:
    logits = supernet_forward(data, weights, arch, phi, temps, space)
    return float(cross_entropy(logits, data.labels).value), accuracy(logits, data.labels)


def evaluate_discretized(weights, arch, space: SearchSpace, data: Batch) -> float:
    """Validation accuracy of the argmax finalnet using the current shared weights."""
    logits = finalnet_forward(data, weights, discretize(arch, space), space)
    return accuracy(logits, data.labels)


# -- search --------------------------------------------------------------


@dataclass
class _State:
    weights: dict[str, np.ndarray]
    arch: np.ndarray
    sgd: MomentumSGD
    adam: Adam
    metrics: list[MetricsRow]
    next_epoch: int = 0


def _batches(split: Batch, order: np.ndarray, size: int, count: int) -> list[Batch]:
    return [Batch(split.inputs[order[i * size:(i + 1) * size]], split.labels[order[i * size:(i + 1) * size]])
            for i in range(count)]


def _grads_of(leaves: dict[str, ad.Node]) -> dict[str, np.ndarray]:
    return {k: n.grad for k, n in leaves.items()}


def _fresh_state(config: SearchConfig, space: SearchSpace, num_classes: int) -> _State:
    rng = np.random.default_rng([config.seed, _INIT_STREAM])
    return _State(
        weights=init_weights(space, num_classes, rng),
        arch=init_arch_params(space),
        sgd=MomentumSGD(config.weight_momentum),
        adam=Adam(config.param_lr, decay=config.param_decay),
        metrics=[],
    )


def train_search(config: SearchConfig, data: Dataset, *,
                 checkpoint_path=None, resume_from=None,
                 on_epoch: Callable[[MetricsRow], None] | None = None) -> SearchResult:
    """Run the batch-mixed search; deterministic for a given config and dataset."""
    space = build_space(config.space)
    if data.feature_dim != space.spec.feature_dim:
        raise ConfigError("space.feature_dim",
                          f"space expects {space.spec.feature_dim} features, data has {data.feature_dim}")
    b = config.batch_size
    n_batches = min(len(data.train) // b, len(data.val) // b)
    if n_batches < 1:
        raise ConfigError("batch_size", f"batch size {b} exceeds a data split")
    temps, plan = config.temps, config.mix

    state = (load_checkpoint(resume_from, config) if resume_from is not None
             else _fresh_state(config, space, data.num_classes))
    counts = {"sparse": 0, "smooth": 0}

    for epoch in range(state.next_epoch, config.epochs):
        if config.mode == "smooth-only":
            p = 0.0
            phis = np.zeros(n_batches, dtype=np.int8)
        else:
            p = p_schedule(plan, epoch)
            phis = sample_indicators(clamp_probability(p), n_batches, (config.seed, epoch))
        shuffle = np.random.default_rng([config.seed, _SHUFFLE_STREAM, epoch])
        train_batches = _batches(data.train, shuffle.permutation(len(data.train)), b, n_batches)
        val_batches = _batches(data.val, shuffle.permutation(len(data.val)), b, n_batches)

        train_losses, val_losses = [], []
        for n, (xb_train, xb_val) in enumerate(zip(train_batches, val_batches)):
            phi = int(phis[n])
            counts["sparse" if phi else "smooth"] += 1
            try:
                with np.errstate(over="raise", invalid="raise", divide="raise"):
                    # weights step on the training batch
                    leaves = {k: ad.Node(v) for k, v in state.weights.items()}
                    loss = cross_entropy(supernet_forward(xb_train, leaves, state.arch, phi, temps, space),
                                         xb_train.labels)
                    ad.backward(loss)
                    weight_step(state.weights, _grads_of(leaves), epoch, config, state.sgd)
                    train_losses.append(float(loss.value))

                    # parameter step on the validation batch, same indicator
                    arch_leaf = ad.Node(state.arch)
                    vloss = cross_entropy(supernet_forward(xb_val, state.weights, arch_leaf, phi, temps, space),
                                          xb_val.labels)
                    ad.backward(vloss)
                    param_step(state.arch, arch_leaf.grad, state.adam)
                    val_losses.append(float(vloss.value))
            except (ad.NonFiniteError, FloatingPointError):
                raise DivergenceError(epoch, n) from None
            if not (math.isfinite(train_losses[-1]) and math.isfinite(val_losses[-1])):
                raise DivergenceError(epoch, n)

        _, sup_acc = evaluate_supernet(state.weights, state.arch, space, data.val, temps, phi=0)
        row = MetricsRow(
            epoch=epoch,
            p=p,
            ies=ies(state.arch, config.ies_temperature),
            train_loss=float(np.mean(train_losses)),
            val_loss=float(np.mean(val_losses)),
            supernet_val_acc=sup_acc,
            discretized_val_acc=evaluate_discretized(state.weights, state.arch, space, data.val),
            genotype=discretize(state.arch, space).key,
        )
        state.metrics.append(row)
        state.next_epoch = epoch + 1
        log.debug("epoch %d p=%.3f ies=%.4f sup=%.3f disc=%.3f %s", epoch, p, row.ies,
                  row.supernet_val_acc, row.discretized_val_acc, row.genotype)
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, state, config)
        if on_epoch is not None:
            on_epoch(row)

    return SearchResult(
        genotype=discretize(state.arch, space).key,
        metrics=state.metrics,
        arch_params=state.arch.copy(),
        weights={k: v.copy() for k, v in state.weights.items()},
        config=config,
        branch_counts=counts,
    )


# -- persistence ---------------------------------------------------------


def metrics_csv(rows: list[MetricsRow], config_digest: str | None = None) -> str:
    buf = io.StringIO()
    if config_digest is not None:
        buf.write(f"# config_digest={config_digest}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_HEADER)
    for r in rows:
        w.writerow(r.as_csv_row())
    return buf.getvalue()


def read_metrics_csv(path) -> list[MetricsRow]:
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    rows = []
    for rec in csv.DictReader(lines):
        rows.append(MetricsRow(
            epoch=int(rec["epoch"]), p=float(rec["p"]), ies=float(rec["ies"]),
            train_loss=float(rec["train_loss"]), val_loss=float(rec["val_loss"]),
            supernet_val_acc=float(rec["supernet_val_acc"]),
            discretized_val_acc=float(rec["discretized_val_acc"]), genotype=rec["genotype"]))
    return rows


def save_checkpoint(path, state: _State, config: SearchConfig) -> None:
    arrays = {f"w.{k}": v for k, v in state.weights.items()}
    arrays.update({f"sgd.{k}": v for k, v in state.sgd.velocity.items()})
    arrays["arch"] = state.arch
    if state.adam.m is not None:
        arrays["adam.m"] = state.adam.m
        arrays["adam.v"] = state.adam.v
    meta = {
        "config_digest": config.digest(),
        "next_epoch": state.next_epoch,
        "adam_t": state.adam.t,
        # indicator and shuffle streams are keyed on (seed, epoch), so this is the generator state
        "generator": {"seed": config.seed, "next_epoch": state.next_epoch},
        "metrics": [dataclasses.asdict(r) for r in state.metrics],
    }
    container.write(path, CHECKPOINT_MAGIC, meta, arrays)


def load_checkpoint(path, config: SearchConfig) -> _State:
    meta, arrays = container.read(path, CHECKPOINT_MAGIC)
    if meta["config_digest"] != config.digest():
        raise ConfigError("config", "checkpoint was written by a different configuration")
    sgd = MomentumSGD(config.weight_momentum)
    sgd.velocity = {k[4:]: v for k, v in arrays.items() if k.startswith("sgd.")}
    adam = Adam(config.param_lr, decay=config.param_decay)
    adam.t = meta["adam_t"]
    adam.m = arrays.get("adam.m")
    adam.v = arrays.get("adam.v")
    return _State(
        weights={k[2:]: v for k, v in arrays.items() if k.startswith("w.")},
        arch=arrays["arch"],
        sgd=sgd,
        adam=adam,
        metrics=[MetricsRow(**r) for r in meta["metrics"]],
        next_epoch=meta["next_epoch"],
    )
