"""Temperature softmax, its Jacobian, batch-mixing schedule and the IES diagnostic.

A low temperature ``t_sp`` gives the *sparse* softmax (near one-hot), a
larger ``t_sm`` the *smooth* one.  Each mini-batch picks one of them through a
Bernoulli indicator whose success probability follows :func:`p_schedule`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

INDICATOR_STREAM = 0x5BD1  # separates indicator draws from other seeded streams


@dataclass(frozen=True)
class TemperaturePair:
    t_sp: float = 1e-3
    t_sm: float = 1e-2

    def __post_init__(self):
        if not (math.isfinite(self.t_sp) and math.isfinite(self.t_sm)):
            raise ValueError("temperatures must be finite")
        if not 0 < self.t_sp <= self.t_sm:
            raise ValueError(f"need 0 < t_sp <= t_sm, got t_sp={self.t_sp}, t_sm={self.t_sm}")

    def select(self, phi: int) -> float:
        return self.t_sp if phi else self.t_sm


@dataclass(frozen=True)
class MixPlan:
    p_low: float = 0.0
    p_up: float = 1.0
    total_epochs: int = 50
    warmup_epochs: int = 1

    def __post_init__(self):
        if not 0.0 <= self.p_low <= 1.0:
            raise ValueError(f"p_low must lie in [0, 1], got {self.p_low}")
        if self.p_up < self.p_low:
            raise ValueError(f"p_up ({self.p_up}) is below p_low ({self.p_low})")
        if self.total_epochs < 1:
            raise ValueError("total_epochs must be positive")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ValueError("warmup_epochs must satisfy 0 <= warmup < total_epochs")


def _check_temperature(t: float) -> None:
    if not t > 0:
        raise ValueError(f"temperature must be positive, got {t}")


def softmax_t(row, t: float) -> np.ndarray:
    """``softmax(row / t)`` along the last axis, with max subtraction."""
    _check_temperature(t)
    z = np.asarray(row, dtype=np.float64) / t
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax input must be finite")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_t_node(row: ad.Node, t: float) -> ad.Node:
    """Differentiable ``softmax(row / t)`` for a 1-D node, built as exp(z - lse(z))."""
    _check_temperature(t)
    z = ad.scale(row, 1.0 / t)
    return ad.exp(ad.add(z, ad.scale(ad.logsumexp(z), -1.0)))


def softmax_jacobian(y, t: float) -> np.ndarray:
    """d softmax(x/t) / dx expressed through the output ``y``: (diag(y) - y y^T) / t."""
    _check_temperature(t)
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1 or np.any(y < 0) or abs(y.sum() - 1.0) > 1e-9:
        raise ValueError("y must be a probability vector")
    return (np.diag(y) - np.outer(y, y)) / t


def select_distribution(row, phi: int, temps: TemperaturePair) -> np.ndarray:
    if phi not in (0, 1):
        raise ValueError(f"indicator must be 0 or 1, got {phi}")
    return softmax_t(row, temps.select(phi))


def p_schedule(plan: MixPlan, epoch: int) -> float:
    """Sparse-batch probability for ``epoch``: 0 during warmup, then linear p_low -> p_up.

    The value is not clamped here; consumers clamp to [0, 1] before sampling.
    """
    if not 0 <= epoch <= plan.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {plan.total_epochs}]")
    if epoch < plan.warmup_epochs:
        return 0.0
    span = plan.total_epochs - plan.warmup_epochs
    return plan.p_low + (plan.p_up - plan.p_low) * (epoch - plan.warmup_epochs) / span


def clamp_probability(p: float) -> float:
    return min(1.0, max(0.0, p))


def indicator_rng(seed) -> np.random.Generator:
    """Counter-based (Philox) generator keyed on ``seed`` (an int or tuple of ints)."""
    entropy = [seed] if isinstance(seed, (int, np.integer)) else list(seed)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([INDICATOR_STREAM, *entropy])))


def sample_indicators(p: float, n: int, seed) -> np.ndarray:
    """``n`` independent Bernoulli(p) flags as an int8 array; same seed, same flags."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if n < 1:
        raise ValueError("n must be positive")
    u = indicator_rng(seed).random(n)
    return (u < p).astype(np.int8)


def entropy(probs) -> np.ndarray:
    """Shannon entropy (nats) along the last axis, with 0 log 0 = 0."""
    probs = np.asarray(probs, dtype=np.float64)
    safe = np.where(probs > 0, probs, 1.0)
    return -np.sum(probs * np.log(safe), axis=-1)


def ies(params, temperature: float = 1.0) -> float:
    """Information entropy summed over edges of softmax(A_e / temperature)."""
    A = np.asarray(params, dtype=np.float64)
    if A.ndim != 2 or not np.all(np.isfinite(A)):
        raise ValueError("parameters must be a finite 2-D array")
    per_edge = entropy(softmax_t(A, temperature))
    # rounding can push a uniform row a few ulps past log M
    return float(np.sum(np.minimum(per_edge, math.log(A.shape[1]))))
