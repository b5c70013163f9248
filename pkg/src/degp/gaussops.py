"""Finite-dimensional Gaussians with structured covariances and their KL.

Function values at ``n`` points with ``C`` outputs are vectorized with the
output index fastest: entry ``i*C + c`` is output ``c`` at point ``i``.  With
that ordering a prior covariance that is ``B`` across points and identity
across outputs is exactly ``np.kron(B, I_C)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Union

import numpy as np
from scipy.linalg import solve_triangular as _solve_tri

from . import ndcore as nd
from .ndcore import ShapeError, Tensor


@dataclass(frozen=True)
class LowRankDiag:
    """(1/M) Gc Gc^T + lam I."""
    Gc: np.ndarray
    lam: float

    def dense(self) -> np.ndarray:
        G = np.asarray(self.Gc)
        return G @ G.T / G.shape[1] + self.lam * np.eye(G.shape[0])


@dataclass(frozen=True)
class KronIdentity:
    """B kron I_C."""
    B: np.ndarray
    C: int

    def dense(self) -> np.ndarray:
        return np.kron(self.B, np.eye(self.C))


@dataclass(frozen=True)
class Dense:
    K: np.ndarray

    def dense(self) -> np.ndarray:
        return np.asarray(self.K)


Covariance = Union[LowRankDiag, KronIdentity, Dense]


@dataclass(frozen=True)
class GaussianMeasure:
    mean: np.ndarray
    cov: Covariance

    @property
    def dim(self) -> int:
        return len(self.mean)

    def dense_cov(self) -> np.ndarray:
        K = self.cov.dense()
        if K.shape != (self.dim, self.dim):
            raise ShapeError(f"covariance {K.shape} does not match mean of length {self.dim}")
        return K


class BaseFactor:
    """Cholesky-derived quantities of a PD base matrix, computed once."""

    def __init__(self, B: np.ndarray):
        self.B = np.asarray(B, dtype=np.float64)
        self.chol = nd.cholesky_array(self.B)

    @cached_property
    def inv_chol(self) -> np.ndarray:
        return _solve_tri(self.chol, np.eye(len(self.chol)), lower=True)

    @cached_property
    def logdet(self) -> float:
        return 2.0 * float(np.log(np.diag(self.chol)).sum())

    @cached_property
    def trace_inv(self) -> float:
        return float(np.sum(self.inv_chol ** 2))


def _factor(B) -> BaseFactor:
    if isinstance(B, BaseFactor):
        return B
    f = getattr(B, "factor", None)
    if isinstance(f, BaseFactor):
        return f
    return BaseFactor(np.asarray(B))


def kron_apply_inverse(B_chol: np.ndarray, V, C: int):
    """(B^-1 kron I_C) V via two triangular solves on an n x (C k) reshape."""
    L = np.asarray(B_chol)
    n = L.shape[0]
    is_t = isinstance(V, Tensor)
    Vv = V.data if is_t else np.asarray(V, dtype=np.float64)
    vec = Vv.ndim == 1
    if Vv.shape[0] != n * C:
        raise ShapeError(f"kron_apply_inverse: expected {n * C} rows, got {Vv.shape[0]}")
    k = 1 if vec else Vv.shape[1]
    if not is_t:
        W = Vv.reshape(n, C * k)
        W = _solve_tri(L, _solve_tri(L, W, lower=True), lower=True, trans="T")
        return W.reshape(Vv.shape)
    W = nd.reshape(V, (n, C * k))
    W = nd.solve_triangular(L, W, lower=True)
    W = nd.solve_triangular(L.T, W, lower=False)
    return nd.reshape(W, Vv.shape)


def kl_dense(q: GaussianMeasure, p: GaussianMeasure) -> float:
    """KL(q || p) on materialized covariances; the reference path."""
    K, Kp = q.dense_cov(), p.dense_cov()
    D = q.dim
    Lp = nd.cholesky_array(Kp)
    Lq = nd.cholesky_array(K)
    A = _solve_tri(Lp, Lq, lower=True)
    diff = np.asarray(q.mean, dtype=np.float64) - np.asarray(p.mean, dtype=np.float64)
    z = _solve_tri(Lp, diff, lower=True)
    logdet_p = 2.0 * np.log(np.diag(Lp)).sum()
    logdet_q = 2.0 * np.log(np.diag(Lq)).sum()
    return 0.5 * float(np.sum(A * A) + z @ z - D + logdet_p - logdet_q)


def kl_structured(m, Gc, lam: float, B, C: int) -> Tensor:
    """KL( N(m, (1/M)Gc Gc^T + lam I) || N(0, B kron I_C) ).

    Differentiable in ``m`` and ``Gc``; ``B`` may be an array, a
    :class:`BaseFactor`, or anything carrying one as ``.factor``.
    O(n^3 + D M^2) with D = n C.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    f = _factor(B)
    n = f.chol.shape[0]
    m, Gc = nd.as_tensor(m), nd.as_tensor(Gc)
    D, M = Gc.shape
    if D != n * C or m.shape != (D,):
        raise ShapeError(f"kl_structured: D={D}, mean {m.shape}, but base is {n}x{n} with C={C}")
    Li = f.inv_chol
    zm = nd.matmul(Li, nd.reshape(m, (n, C)))
    quad = nd.sum(nd.square(zm))
    zg = nd.matmul(Li, nd.reshape(Gc, (n, C * M)))
    trace = nd.add(nd.mul(nd.sum(nd.square(zg)), 1.0 / M), lam * C * f.trace_inv)
    logdet_q = nd.lowrank_logdet(Gc, lam)
    total = nd.sub(nd.add(nd.add(trace, quad), C * f.logdet - D), logdet_q)
    return nd.mul(total, 0.5)
