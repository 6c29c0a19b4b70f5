"""Optimizers, the one-cycle schedule, and plateau/early-stop control."""

from __future__ import annotations

import math

import numpy as np

from ..errors import DivergedError
from .nn import ParamStore

__all__ = ["AdamW", "OneCycleSchedule", "TrainControl"]


class AdamW:
    """Adam with optional decoupled weight decay.

    kind="adam" is the standard bias-corrected update; kind="adamw" applies
    theta <- theta - lr * wd * theta before the moment step. Frozen
    parameters are never touched. Moment state is keyed by parameter name,
    so freezing and unfreezing between stages keeps state consistent.
    """

    def __init__(self, store: ParamStore, lr: float, weight_decay: float = 0.0,
                 kind: str = "adamw", betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8):
        if kind not in ("adam", "adamw"):
            raise ValueError(f"unknown optimizer kind {kind!r}")
        self.store = store
        self.lr = lr
        self.weight_decay = weight_decay
        self.kind = kind
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for name, p in self.store.params.items():
            if not p.requires_grad or p.grad is None:
                continue
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise DivergedError(f"non-finite gradient for parameter {name!r}")
            if self.kind == "adamw" and self.weight_decay != 0.0:
                p.data -= self.lr * self.weight_decay * p.data
            m = self._m.get(name)
            if m is None:
                m = self._m[name] = np.zeros_like(p.data)
                self._v[name] = np.zeros_like(p.data)
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.kind == "adam" and self.weight_decay != 0.0:
                update = update + self.weight_decay * p.data
            p.data -= self.lr * update

    def zero_grad(self) -> None:
        self.store.zero_grads()


class OneCycleSchedule:
    """Cosine warmup from max_lr/25 over the first 30% of steps, then cosine
    anneal down to max_lr/1e4."""

    WARMUP_FRACTION = 0.3
    DIV_FACTOR = 25.0
    FINAL_DIV = 1e4

    def __init__(self, max_lr: float, total_steps: int):
        if total_steps < 2:
            raise ValueError(f"one-cycle needs total_steps >= 2, got {total_steps}")
        self.max_lr = max_lr
        self.total_steps = total_steps
        self._warm = self.WARMUP_FRACTION * total_steps

    def lr_at(self, step: int) -> float:
        lo = self.max_lr / self.DIV_FACTOR
        fin = self.max_lr / self.FINAL_DIV
        t = float(step)
        if t <= self._warm:
            frac = t / self._warm
            return lo + (self.max_lr - lo) * 0.5 * (1.0 - math.cos(math.pi * frac))
        span = self.total_steps - self._warm
        frac = min(1.0, (t - self._warm) / span)
        return fin + (self.max_lr - fin) * 0.5 * (1.0 + math.cos(math.pi * frac))


class TrainControl:
    """Early stopping plus reduce-on-plateau, keyed on validation MAPE.

    Improvement means a strictly lower metric. The plateau counter halves
    the learning rate (down to min_lr) after `plateau_patience` epochs
    without improvement; training stops after `early_patience` of them.
    The caller snapshots parameters on improvement and restores on stop.
    """

    def __init__(self, early_patience: int = 15, plateau_patience: int = 5,
                 plateau_factor: float = 0.5, min_lr: float = 1e-7):
        if early_patience < 1 or plateau_patience < 1:
            raise ValueError("patience values must be >= 1")
        if not 0.0 < plateau_factor < 1.0:
            raise ValueError(f"plateau factor must be in (0, 1), got {plateau_factor}")
        self.early_patience = early_patience
        self.plateau_patience = plateau_patience
        self.plateau_factor = plateau_factor
        self.min_lr = min_lr
        self.best_metric = math.inf
        self.epochs_since_improvement = 0
        self._plateau_count = 0

    def observe(self, metric: float, lr: float) -> tuple[float, bool, bool]:
        """Record one epoch's metric; returns (new_lr, improved, should_stop)."""
        improved = metric < self.best_metric
        if improved:
            self.best_metric = metric
            self.epochs_since_improvement = 0
            self._plateau_count = 0
        else:
            self.epochs_since_improvement += 1
            self._plateau_count += 1
        if self._plateau_count >= self.plateau_patience:
            lr = max(self.min_lr, lr * self.plateau_factor)
            self._plateau_count = 0
        stop = self.epochs_since_improvement >= self.early_patience
        return lr, improved, stop
