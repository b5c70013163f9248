"""The ensemble-defined Gaussian process q(f) = GP(m, k).

m is the member mean and k the empirical member covariance plus a
``lam * I`` jitter.  On a finite set of points everything is kept as the
centered factor ``Gc`` (D x M) so the D x D kernel is never formed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndcore as nd
from .gaussops import GaussianMeasure, LowRankDiag
from .ndcore import Tensor
from .nets import EnsembleWeights, ensemble_forward

LAMBDA_FLOOR = 1e-8


@dataclass(frozen=True)
class FunctionBatch:
    mean: Tensor          # (D,)
    Gc: Tensor            # (D, M), columns sum to zero
    lam: float

    @property
    def members(self) -> int:
        return self.Gc.shape[1]

    def measure(self) -> GaussianMeasure:
        return GaussianMeasure(self.mean.data, LowRankDiag(self.Gc.data, self.lam))


def mean_and_center(raw) -> tuple[Tensor, Tensor]:
    """Member mean and centered factor from an M x D block of member values."""
    raw = nd.as_tensor(raw)
    if raw.ndim == 3:
        raw = nd.reshape(raw, (raw.shape[0], -1))
    m = nd.mean(raw, axis=0)
    Gc = nd.transpose(nd.sub(raw, m))
    return m, Gc


def lambda_from_trace(Gc, fraction: float) -> float:
    """``fraction`` times the mean eigenvalue of (1/M) Gc Gc^T, floored.

    The mean eigenvalue is the trace over D, i.e. ||Gc||_F^2 / (M D).
    """
    G = Gc.data if isinstance(Gc, Tensor) else np.asarray(Gc)
    D, M = G.shape
    return max(fraction * float(np.sum(G * G)) / (M * D), LAMBDA_FLOOR)


def function_batch(raw, fraction: float) -> FunctionBatch:
    m, Gc = mean_and_center(raw)
    return FunctionBatch(m, Gc, lambda_from_trace(Gc, fraction))


def posterior_at(ens: EnsembleWeights, X, fraction: float) -> GaussianMeasure:
    """q's marginal at ``X`` in low-rank-plus-diagonal form."""
    return function_batch(ensemble_forward(ens, X), fraction).measure()


def sample_functions(q, U: int, rng: np.random.Generator) -> Tensor:
    """U draws of f = m + (1/sqrt M) sum_i e_i Gc[:, i] + sqrt(lam) e_0.

    ``q`` is a :class:`FunctionBatch` (pathwise differentiable in m and Gc)
    or a low-rank :class:`GaussianMeasure`.  Returns a U x D tensor.
    """
    if U < 1:
        raise ValueError("need at least one sample")
    if isinstance(q, GaussianMeasure):
        if not isinstance(q.cov, LowRankDiag):
            raise TypeError("sampling needs the low-rank form")
        m, Gc, lam = nd.as_tensor(q.mean), nd.as_tensor(q.cov.Gc), q.cov.lam
    else:
        m, Gc, lam = q.mean, q.Gc, q.lam
    D, M = Gc.shape
    eps = rng.standard_normal((U, M))
    eps0 = rng.standard_normal((U, D))
    spread = nd.mul(nd.matmul(eps, nd.transpose(Gc)), 1.0 / np.sqrt(M))
    return nd.add(nd.add(spread, m), np.sqrt(lam) * eps0)
