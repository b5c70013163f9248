"""Neural-network GP prior kernels and exact GP regression.

The Monte-Carlo prior draws S random weight sets for a ReLU feature
projector h once, at construction, and reuses them for every evaluation:

    B(x, x') = sw2 * (1 / (S C_hat)) sum_s h(x, w_s)^T h(x', w_s) + sb2

The full prior covariance over C outputs is ``B kron I_C``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from . import ndcore as nd
from .gaussops import BaseFactor
from .nets import MlpSpec, forward_features, init_mlp

JITTER = 1e-8


@dataclass
class PriorSpec:
    """MC NN-GP prior over functions.

    ``hidden`` is the projector architecture (empty means identity
    features).  Hidden-layer draws are N(0, layer_weight_var / fan_in) for
    weights and N(0, layer_bias_var) for biases.
    """
    input_dim: int
    hidden: tuple[int, ...] = (64,)
    weight_var: float = 2.0
    bias_var: float = 0.01
    layer_weight_var: float = 2.0
    layer_bias_var: float = 0.01
    samples: int = 10
    seed: int = 0
    draws: dict = field(init=False, repr=False)
    _cache: dict = field(init=False, repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.samples < 1:
            raise ValueError("MC prior needs S >= 1")
        if min(self.weight_var, self.layer_weight_var) <= 0 or min(self.bias_var, self.layer_bias_var) < 0:
            raise ValueError("prior variances must be positive")
        spec = self.projector
        ss = np.random.SeedSequence([int(self.seed), 0x9E3779B9])
        draws = [init_mlp(spec, s, self.layer_weight_var, self.layer_bias_var) for s in ss.spawn(self.samples)]
        self.draws = {k: np.stack([d[k] for d in draws]) for k in draws[0]}

    @property
    def projector(self) -> MlpSpec:
        return MlpSpec(self.input_dim, self.hidden, 1)

    @property
    def feature_dim(self) -> int:
        return self.projector.feature_dim


@dataclass
class PriorBase:
    B: np.ndarray
    factor: BaseFactor

    @property
    def chol(self) -> np.ndarray:
        return self.factor.chol

    @property
    def logdet(self) -> float:
        return self.factor.logdet

    def dense(self, C: int) -> np.ndarray:
        return np.kron(self.B, np.eye(C))


def features(prior: PriorSpec, X) -> np.ndarray:
    """Projector features for every frozen draw, shape (S, n, C_hat)."""
    X = np.asarray(X, dtype=np.float64)
    if not prior.hidden:
        return np.broadcast_to(X, (prior.samples, *X.shape))
    return forward_features(prior.projector, prior.draws, X).data


def mc_kernel(prior: PriorSpec, X, X2=None) -> np.ndarray:
    """sw2 * k_hat(X, X2) + sb2 without jitter."""
    H = features(prior, X)
    S, n, c_hat = H.shape
    F = np.transpose(H, (1, 0, 2)).reshape(n, S * c_hat)
    if X2 is None:
        F2 = F
    else:
        H2 = features(prior, X2)
        F2 = np.transpose(H2, (1, 0, 2)).reshape(H2.shape[1], S * c_hat)
    return prior.weight_var * (F @ F2.T) / (S * c_hat) + prior.bias_var


def mc_nngp_base(prior: PriorSpec, X) -> PriorBase:
    """Base matrix on ``X`` and its factorization (jittered by 1e-8 x mean diagonal)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    key = (X.shape, X.tobytes())
    hit = prior._cache.get(key)
    if hit is not None:
        return hit
    B = mc_kernel(prior, X)
    B = 0.5 * (B + B.T)
    jitter = JITTER * max(float(np.mean(np.diag(B))), 1e-300)
    base = PriorBase(B, BaseFactor(B + jitter * np.eye(len(B))))
    prior._cache.clear()
    prior._cache[key] = base
    return base


def arccos_kernel(X, X2=None, depth: int = 1, weight_var: float = 2.0, bias_var: float = 0.01) -> np.ndarray:
    """Infinite-width NN-GP kernel of a ReLU MLP with ``depth`` hidden layers."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    X2 = X if X2 is None else np.atleast_2d(np.asarray(X2, dtype=np.float64))
    d = X.shape[1]
    K = weight_var * (X @ X2.T) / d + bias_var
    k1 = weight_var * np.sum(X * X, axis=1) / d + bias_var
    k2 = weight_var * np.sum(X2 * X2, axis=1) / d + bias_var
    for _ in range(depth):
        norms = np.sqrt(np.outer(k1, k2))
        cos = np.clip(K / norms, -1.0, 1.0)
        theta = np.arccos(cos)
        K = weight_var / (2 * np.pi) * norms * (np.sin(theta) + (np.pi - theta) * cos) + bias_var
        k1 = weight_var / 2 * k1 + bias_var
        k2 = weight_var / 2 * k2 + bias_var
    return K


def arccos_diag(X, depth: int = 1, weight_var: float = 2.0, bias_var: float = 0.01) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    k = weight_var * np.sum(X * X, axis=1) / X.shape[1] + bias_var
    for _ in range(depth):
        k = weight_var / 2 * k + bias_var
    return k


@dataclass
class GPPrediction:
    mean: np.ndarray
    var: np.ndarray
    clamped: int = 0


def exact_gp_regression(K_train, K_cross, K_test_diag, y, noise_var: float) -> GPPrediction:
    """Posterior mean and marginal variance of a GP with Gaussian noise.

    ``K_cross`` is n_train x n_test.  Negative variances from round-off
    are clamped to zero and counted.
    """
    K_train = np.asarray(K_train, dtype=np.float64)
    n = len(K_train)
    L = nd.cholesky_array(K_train + noise_var * np.eye(n))
    y = np.asarray(y, dtype=np.float64)
    alpha = cho_solve((L, True), y)
    mean = np.asarray(K_cross).T @ alpha
    V = solve_triangular(L, np.asarray(K_cross, dtype=np.float64), lower=True)
    var = np.asarray(K_test_diag, dtype=np.float64) - np.sum(V * V, axis=0)
    bad = int(np.sum(var < 0))
    if bad:
        warnings.warn(f"clamped {bad} negative predictive variances", RuntimeWarning, stacklevel=2)
        var = np.maximum(var, 0.0)
    return GPPrediction(mean, var, bad)
