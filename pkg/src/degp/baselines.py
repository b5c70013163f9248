"""Reference ensembles trained member-by-member, and exact NN-GP regression.

DE maximizes each member's log-likelihood, rDE adds an L2 penalty
(MAP under a Gaussian weight prior), RMS pulls each member towards its own
frozen random anchor.  All members share one stacked forward pass, but the
summed loss has no cross-member terms and gradients are clipped per member,
so every member follows exactly the trajectory it would have alone.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndcore as nd
from .data import Dataset
from .nets import EnsembleWeights, ensemble_forward, init_mlp
from .priorkern import GPPrediction, arccos_diag, arccos_kernel, exact_gp_regression
from .trainer import StepInfo, TemperatureParam, TrainConfig, expected_loglik, fit


@dataclass(frozen=True)
class AnchorSet:
    """Frozen prior draws, one per member, in the ensemble's stacked layout."""
    params: dict

    @classmethod
    def draw(cls, ens: EnsembleWeights, seed: int, weight_var: float = 2.0, bias_var: float = 0.01) -> "AnchorSet":
        if ens.shared_trunk:
            raise ValueError("anchored ensembles assume independent members")
        ss = np.random.SeedSequence([int(seed), 0xA11C])
        draws = [init_mlp(ens.spec, s, weight_var, bias_var) for s in ss.spawn(ens.members)]
        params = {k: np.stack([d[k] for d in draws]) for k in draws[0]}
        for v in params.values():
            v.flags.writeable = False
        return cls(params)

    @classmethod
    def zeros(cls, ens: EnsembleWeights) -> "AnchorSet":
        return cls({k: np.zeros_like(v) for k, v in ens.params.items()})


def member_objective(cfg: TrainConfig, gamma: float = 0.0, anchors: AnchorSet | None = None):
    """Summed per-member negative log-likelihood plus gamma * ||w_i - a_i||^2."""

    def objective(ens, batch, params, rng, log_t):
        out = ensemble_forward(ens, batch.X, params)      # (M, n, C)
        temp = nd.exp(log_t) if log_t is not None else None
        ll = expected_loglik(out, batch.y, cfg.likelihood, temp, batch.mask)
        ll = nd.mul(ll, float(out.shape[0]))  # undo the 1/U average: one sample per member
        pen = nd.as_tensor(0.0)
        if gamma > 0:
            for k, v in params.items():
                a = anchors.params[k] if anchors is not None else 0.0
                pen = nd.add(pen, nd.sum(nd.square(nd.sub(v, a))))
        loss = nd.add(nd.neg(ll), nd.mul(pen, gamma))
        return loss, StepInfo(ll.item(), 0.0, pen.item(), 0.0, None if temp is None else float(temp.data))

    return objective


def _temperature(cfg: TrainConfig):
    lik = cfg.likelihood
    if lik.kind == "categorical" and lik.train_temperature:
        return TemperatureParam(lik.temperature, lik.temperature_lr)
    return None


def train_de(ens: EnsembleWeights, data: Dataset, cfg: TrainConfig):
    """Maximum-likelihood ensemble."""
    return fit(ens, data, cfg, member_objective(cfg), member_independent=True, temperature=_temperature(cfg))


def train_rde(ens: EnsembleWeights, data: Dataset, cfg: TrainConfig, weight_decay: float):
    """MAP ensemble: NLL + weight_decay * ||w_i||^2 per member."""
    return fit(ens, data, cfg, member_objective(cfg, weight_decay, AnchorSet.zeros(ens)),
               member_independent=True, temperature=_temperature(cfg))


def train_rms(ens: EnsembleWeights, data: Dataset, cfg: TrainConfig, gamma: float, anchors: AnchorSet):
    """Anchored ensemble: NLL + gamma * ||w_i - a_i||^2 per member."""
    return fit(ens, data, cfg, member_objective(cfg, gamma, anchors),
               member_independent=True, temperature=_temperature(cfg))


def nngp_regression_baseline(train: Dataset, X_test, depth: int, weight_var: float = 2.0,
                             bias_var: float = 0.01, noise_var: float = 0.1) -> GPPrediction:
    """GP regression under the analytic ReLU NN-GP kernel; single output."""
    K = arccos_kernel(train.X, None, depth, weight_var, bias_var)
    Kx = arccos_kernel(train.X, X_test, depth, weight_var, bias_var)
    kd = arccos_diag(X_test, depth, weight_var, bias_var)
    return exact_gp_regression(K, Kx, kd, np.asarray(train.y, dtype=float)[:, 0], noise_var)
