"""Functional variational training of the ensemble-defined GP.

Each step draws a mini-batch, appends points sampled from the measurement
distribution, and maximizes

    L1 - alpha * KL(q(f^X) || p(f^X)) - beta * sum_i ||w_i||^2

where L1 is the U-sample Monte-Carlo expected log-likelihood of the batch
under q and the KL is evaluated exactly on the measurement set.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import ndcore as nd
from .data import Dataset
from .gaussops import kl_structured
from .ndcore import NumericError, Tape, Tensor
from .nets import EnsembleWeights, ensemble_forward
from .optim import Optimizer, OptimizerSpec, Schedule, clip_global, clip_per_member
from .posterior import FunctionBatch, function_batch, sample_functions
from .priorkern import PriorSpec, mc_nngp_base

log = logging.getLogger(__name__)

_PURPOSES = {"shuffle": 1, "measure": 2, "sample": 3, "predict": 4, "act": 5, "env": 6}


def stream(seed: int, step: int, purpose: str) -> np.random.Generator:
    """Independent generator keyed by (seed, step, purpose)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(step), _PURPOSES[purpose]])))


@dataclass(frozen=True)
class Measurement:
    """Uniform box from which extra measurement points are drawn."""
    low: tuple[float, ...] = (-2.0,)
    high: tuple[float, ...] = (2.0,)
    points: int = 0


@dataclass(frozen=True)
class Likelihood:
    kind: str = "gaussian"
    noise_var: float = 0.1
    temperature: float = 1.0
    train_temperature: bool = True
    temperature_lr: float = 1e-3

    def __post_init__(self):
        if self.kind not in ("gaussian", "categorical"):
            raise ValueError(f"unknown likelihood {self.kind!r}")
        if self.noise_var <= 0 or self.temperature <= 0:
            raise ValueError("noise variance and temperature must be positive")


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0
    beta: float = 0.0
    lambda_fraction: float = 0.05
    samples: int = 256
    measurement: Measurement = field(default_factory=Measurement)
    likelihood: Likelihood = field(default_factory=Likelihood)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    epochs: int = 100
    batch_size: int = 256
    seed: int = 0
    clip_norm: float | None = 100.0
    single_batch_epochs: bool = False

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.samples < 1:
            raise ValueError("U must be >= 1")


class TemperatureParam:
    """Trainable log-temperature with its own Adam state."""

    def __init__(self, temperature: float = 1.0, lr: float = 1e-3):
        self.params = {"log_t": np.array(math.log(temperature))}
        self.opt = Optimizer(OptimizerSpec("adam", lr), self.params)

    @property
    def value(self) -> float:
        return float(np.exp(self.params["log_t"]))


class TrainingAborted(NumericError):
    def __init__(self, msg: str, last_good: EnsembleWeights, history: list):
        super().__init__(msg)
        self.last_good = last_good
        self.history = history


def measurement_set(batch_X: np.ndarray, nu: Measurement, rng: np.random.Generator) -> np.ndarray:
    """Batch inputs followed by ``nu.points`` uniform draws from the box."""
    batch_X = np.asarray(batch_X, dtype=np.float64)
    if nu.points == 0:
        return batch_X
    low, high = np.asarray(nu.low, dtype=float), np.asarray(nu.high, dtype=float)
    extra = rng.uniform(low, high, size=(nu.points, batch_X.shape[1]))
    return np.concatenate([batch_X, extra], axis=0)


def expected_loglik(samples, y, likelihood: Likelihood, temperature=None, mask=None) -> Tensor:
    """(1/U) sum_u sum_x log p(y | f_u(x)) for samples of shape (U, n, C).

    Gaussian: summed over outputs (only where ``mask`` is 1).
    Categorical: log softmax(f / T) at the integer label.
    """
    samples = nd.as_tensor(samples)
    if not np.all(np.isfinite(samples.data)):
        raise NumericError("non-finite function sample in expected log-likelihood")
    U = samples.shape[0]
    if likelihood.kind == "gaussian":
        s2 = likelihood.noise_var
        resid = nd.sub(samples, np.asarray(y, dtype=np.float64))
        ll = nd.sub(-0.5 * math.log(2 * math.pi * s2), nd.mul(nd.square(resid), 0.5 / s2))
        if mask is not None:
            ll = nd.mul(ll, np.asarray(mask, dtype=np.float64))
        return nd.mul(nd.sum(ll), 1.0 / U)
    T = likelihood.temperature if temperature is None else temperature
    logp = nd.log_softmax(nd.div(samples, T), axis=-1)
    onehot = np.eye(samples.shape[-1])[np.asarray(y, dtype=np.int64)]
    return nd.mul(nd.sum(nd.mul(logp, onehot)), 1.0 / U)


def weight_penalty(params) -> Tensor:
    """sum of squared weights; shared-trunk parameters appear once."""
    total = nd.as_tensor(0.0)
    for v in params.values():
        total = nd.add(total, nd.sum(nd.square(v)))
    return total


@dataclass
class StepInfo:
    L1: float
    L2: float
    L3: float
    lam: float
    temperature: float | None


def felbo_loss(ens: EnsembleWeights, batch: Dataset, prior: PriorSpec, cfg: TrainConfig,
               rng: np.random.Generator, params=None, log_temp=None) -> tuple[Tensor, StepInfo]:
    """Negative fELBO for one step and its components.

    ``batch`` may hold zero points, in which case only the KL and the weight
    penalty remain (the measurement set is then pure ``nu`` draws).
    """
    p = ens.params if params is None else params
    X_meas = measurement_set(batch.X, cfg.measurement, rng)
    if len(X_meas) == 0:
        raise ValueError("empty measurement set")
    raw = ensemble_forward(ens, X_meas, p)
    M, _, C = raw.shape
    fb = function_batch(raw, cfg.lambda_fraction)
    base = mc_nngp_base(prior, X_meas)
    nb = len(batch)
    temp = None
    if nb > 0:
        f = sample_functions(fb, cfg.samples, rng)
        f = nd.reshape(nd.getitem(f, (slice(None), slice(0, nb * C))), (cfg.samples, nb, C))
        if cfg.likelihood.kind == "categorical":
            temp = nd.exp(log_temp) if log_temp is not None else cfg.likelihood.temperature
        L1 = expected_loglik(f, batch.y, cfg.likelihood, temp, batch.mask)
    else:
        L1 = nd.as_tensor(0.0)
    L2 = kl_structured(fb.mean, fb.Gc, fb.lam, base, C) if cfg.alpha > 0 else nd.as_tensor(0.0)
    L3 = weight_penalty(p) if cfg.beta > 0 else nd.as_tensor(0.0)
    obj = nd.sub(nd.sub(L1, nd.mul(L2, cfg.alpha)), nd.mul(L3, cfg.beta))
    loss = nd.neg(obj)
    t_val = None
    if temp is not None:
        t_val = float(temp.data) if isinstance(temp, Tensor) else float(temp)
    return loss, StepInfo(L1.item(), L2.item(), L3.item(), fb.lam, t_val)


Objective = Callable[[EnsembleWeights, Dataset, dict, np.random.Generator, "Tensor | None"],
                     "tuple[Tensor, StepInfo]"]


def fit(ens: EnsembleWeights, data: Dataset, cfg: TrainConfig, objective: Objective,
        member_independent: bool = False, temperature: TemperatureParam | None = None):
    """Generic mini-batch loop shared by the fELBO trainer and the baselines.

    Returns the trained copy of ``ens`` and per-epoch history dicts.
    """
    ens = ens.copy()
    history: list[dict] = []
    n = len(data)
    if cfg.epochs == 0 or n == 0:
        return ens, history
    bs = min(cfg.batch_size, n)
    # single-batch mode: an "epoch" is one uniformly drawn mini-batch
    steps_per_epoch = 1 if cfg.single_batch_epochs else math.ceil(n / bs)
    total = cfg.epochs * steps_per_epoch
    opt = Optimizer(cfg.optimizer, ens.params)
    sched: Schedule = cfg.optimizer.schedule
    step = 0
    last_good = ens.copy()
    for epoch in range(cfg.epochs):
        order = stream(cfg.seed, epoch, "shuffle").permutation(n) if bs < n else np.arange(n)
        if cfg.single_batch_epochs:
            order = np.sort(order[:bs])
        acc = np.zeros(3)
        lr = cfg.optimizer.lr
        info = None
        for b in range(steps_per_epoch):
            idx = order[b * bs:(b + 1) * bs]
            batch = data.subset(idx)
            lr = cfg.optimizer.lr * sched.factor(step, total, epoch)
            rng = stream(cfg.seed, step, "sample")
            leaves = {k: Tensor(v) for k, v in ens.params.items()}
            log_t = Tensor(temperature.params["log_t"]) if temperature is not None else None
            try:
                with Tape() as tape:
                    tape.watch(*leaves.values())
                    if log_t is not None:
                        tape.watch(log_t)
                    loss, info = objective(ens, batch, leaves, rng, log_t)
                keys = list(leaves)
                targets = [leaves[k] for k in keys] + ([log_t] if log_t is not None else [])
                grads_list = tape.gradient(loss, targets)
                if not np.isfinite(loss.item()) or not all(np.all(np.isfinite(g)) for g in grads_list):
                    raise NumericError("non-finite loss or gradient")
            except NumericError as e:
                raise TrainingAborted(f"step {step} (epoch {epoch}): {e}", last_good, history) from e
            grads = dict(zip(keys, grads_list[:len(keys)]))
            if member_independent:
                clip_per_member(grads, ens.member_keys(), cfg.clip_norm)
            else:
                clip_global(grads, cfg.clip_norm)
            last_good = ens.copy()
            opt.step(ens.params, grads, lr)
            if temperature is not None:
                temperature.opt.step(temperature.params, {"log_t": grads_list[-1]}, temperature.opt.spec.lr)
            acc += (info.L1, info.L2, info.L3)
            step += 1
        acc /= steps_per_epoch
        history.append({"epoch": epoch, "L1": acc[0], "L2": acc[1], "L3": acc[2],
                        "temperature": None if temperature is None else temperature.value,
                        "lr": lr, "lam": None if info is None else info.lam})
    return ens, history


def train(ens: EnsembleWeights, data: Dataset, prior: PriorSpec, cfg: TrainConfig,
          temperature: TemperatureParam | None = None):
    """Train all members jointly on the negative fELBO.

    A categorical likelihood with ``train_temperature`` gets a
    :class:`TemperatureParam` unless one is passed in.
    Returns ``(trained ensemble, history)``; the history entries also
    carry the final temperature.
    """
    lik = cfg.likelihood
    if temperature is None and lik.kind == "categorical" and lik.train_temperature:
        temperature = TemperatureParam(lik.temperature, lik.temperature_lr)

    def objective(e, batch, params, rng, log_t):
        return felbo_loss(e, batch, prior, cfg, rng, params, log_t)

    return fit(ens, data, cfg, objective, temperature=temperature)


def with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, seed=seed)
