"""Seeded synthetic classification data from a random tanh teacher network.

Inputs are standard normal; the label is the argmax of a one-hidden-layer
tanh teacher's logits plus Gumbel noise.  Rejection sampling fills an exact
per-class quota, so every split is class-balanced.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import container
from .supernet import Batch

MAGIC = b"SPDATA01"
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class DataConfig:
    feature_dim: int = 8
    num_classes: int = 4
    sizes: tuple[int, int, int] = (2048, 1024, 1024)
    seed: int = 0
    teacher_gain: float = 2.5
    label_noise: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if self.feature_dim < 1 or self.num_classes < 2:
            raise ValueError("need feature_dim >= 1 and num_classes >= 2")
        if len(self.sizes) != 3 or min(self.sizes) < 1:
            raise ValueError("sizes must be three positive split sizes (train, val, test)")
        if self.teacher_gain <= 0 or self.label_noise < 0:
            raise ValueError("teacher_gain must be positive and label_noise non-negative")

    def to_dict(self) -> dict:
        return {"feature_dim": self.feature_dim, "num_classes": self.num_classes,
                "sizes": list(self.sizes), "seed": self.seed,
                "teacher_gain": self.teacher_gain, "label_noise": self.label_noise}


@dataclass(frozen=True)
class Dataset:
    config: DataConfig
    train: Batch
    val: Batch
    test: Batch
    digest: str = field(default="", compare=False)

    @property
    def feature_dim(self) -> int:
        return self.config.feature_dim

    @property
    def num_classes(self) -> int:
        return self.config.num_classes

    def split(self, name: str) -> Batch:
        return getattr(self, name)


def _quotas(n: int, k: int) -> np.ndarray:
    q = np.full(k, n // k)
    q[: n % k] += 1
    return q


def generate(config: DataConfig) -> Dataset:
    d, k = config.feature_dim, config.num_classes
    rng = np.random.default_rng(config.seed)
    U = rng.normal(size=(d, d)) * config.teacher_gain / np.sqrt(d)
    c = rng.normal(size=d) * 0.5
    V = rng.normal(size=(d, k))

    def draw_split(n):
        quota = _quotas(n, k)
        xs, ys = [], []
        have = np.zeros(k, dtype=np.int64)
        while np.any(have < quota):
            x = rng.normal(size=(4 * n, d))
            logits = np.tanh(x @ U + c) @ V + config.label_noise * rng.gumbel(size=(4 * n, k))
            y = np.argmax(logits, axis=1)
            for cls in range(k):
                need = quota[cls] - have[cls]
                if need <= 0:
                    continue
                picked = np.flatnonzero(y == cls)[:need]
                xs.append(x[picked])
                ys.append(y[picked])
                have[cls] += picked.size
        x = np.concatenate(xs)
        y = np.concatenate(ys)
        order = rng.permutation(n)
        return Batch(x[order], y[order])

    splits = [draw_split(n) for n in config.sizes]
    ds = Dataset(config, *splits)
    return Dataset(config, *splits, digest=hashlib.sha256(encode(ds)).hexdigest())


def encode(ds: Dataset) -> bytes:
    return container.encode(MAGIC, ds.config.to_dict(), _arrays(ds))


def save(ds: Dataset, path) -> str:
    """Write the dataset container; returns the sha256 of the file."""
    data = container.write(path, MAGIC, ds.config.to_dict(), _arrays(ds))
    return hashlib.sha256(data).hexdigest()


def _arrays(ds: Dataset) -> dict[str, np.ndarray]:
    return {f"{n}.{p}": getattr(ds.split(n), "inputs" if p == "x" else "labels")
            for n in SPLITS for p in ("x", "y")}


def load(path) -> Dataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    meta, arrays = container.decode(raw, MAGIC)
    cfg = DataConfig(**meta)
    splits = [Batch(arrays[f"{n}.x"], arrays[f"{n}.y"]) for n in SPLITS]
    return Dataset(cfg, *splits, digest=hashlib.sha256(raw).hexdigest())
