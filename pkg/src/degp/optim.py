"""First-order optimizers, learning-rate schedules and gradient clipping."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np


@dataclass(frozen=True)
class Schedule:
    """Learning-rate multiplier.

    ``cosine`` decays from 1 to 0 over the run's total steps; ``step``
    multiplies by ``gamma`` every ``every`` epochs, or at each epoch in
    ``milestones`` when given.
    """
    kind: str = "constant"
    gamma: float = 0.1
    every: int = 0
    milestones: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("constant", "cosine", "step"):
            raise ValueError(f"unknown schedule {self.kind!r}")

    def factor(self, step: int, total_steps: int, epoch: int) -> float:
        if self.kind == "cosine":
            return 0.5 * (1.0 + math.cos(math.pi * min(step, total_steps) / max(total_steps, 1)))
        if self.kind == "step":
            if self.milestones:
                k = sum(epoch >= m for m in self.milestones)
            else:
                k = epoch // self.every if self.every > 0 else 0
            return self.gamma ** k
        return 1.0


@dataclass(frozen=True)
class OptimizerSpec:
    name: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    schedule: Schedule = field(default_factory=Schedule)

    def __post_init__(self):
        if self.name not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.name!r}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")


class Optimizer:
    """Elementwise update rule over a dict of named arrays (updated in place)."""

    def __init__(self, spec: OptimizerSpec, params: Mapping[str, np.ndarray]):
        self.spec = spec
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()} if spec.name == "adam" else {}

    def step(self, params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float) -> None:
        s = self.spec
        self.t += 1
        for k, g in grads.items():
            if s.name == "sgd":
                buf = self.m[k]
                buf *= s.momentum
                buf += g
                params[k] = params[k] - lr * buf
            else:
                m, v = self.m[k], self.v[k]
                m *= s.beta1
                m += (1 - s.beta1) * g
                v *= s.beta2
                v += (1 - s.beta2) * g * g
                mhat = m / (1 - s.beta1 ** self.t)
                vhat = v / (1 - s.beta2 ** self.t)
                params[k] = params[k] - lr * mhat / (np.sqrt(vhat) + s.eps)


def clip_global(grads: dict[str, np.ndarray], max_norm: float | None) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


def clip_per_member(grads: dict[str, np.ndarray], keys: Iterable[str], max_norm: float | None) -> None:
    """Clip each member's gradient separately so members stay independent."""
    if max_norm is None:
        return
    keys = list(keys)
    sq = sum(np.sum(grads[k] ** 2, axis=tuple(range(1, grads[k].ndim))) for k in keys)
    scale = np.minimum(1.0, max_norm / np.maximum(np.sqrt(sq), 1e-300))
    for k in keys:
        grads[k] = grads[k] * scale.reshape((-1,) + (1,) * (grads[k].ndim - 1))
