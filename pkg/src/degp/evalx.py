"""Predictive distributions and uncertainty/accuracy metrics.

Entropies and mutual information are in nats.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import log_softmax, softmax

from .nets import EnsembleWeights, ensemble_forward
from .posterior import function_batch, sample_functions

ECE_BINS = 15


@dataclass
class PredictiveSummary:
    """Per-point predictive quantities.

    Regression fills ``mean``/``var``; classification fills ``probs``.
    ``uncertainty`` is the raw epistemic score (mutual information for
    classification, variance of the sample means for regression).
    """
    samples: int
    mean: np.ndarray | None = None
    var: np.ndarray | None = None
    probs: np.ndarray | None = None
    uncertainty: np.ndarray | None = None

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.var)

    def normalized_uncertainty(self, pool_max: float | None = None) -> np.ndarray:
        return normalize(self.uncertainty, pool_max)


def normalize(u: np.ndarray, pool_max: float | None = None) -> np.ndarray:
    top = float(np.max(u)) if pool_max is None else float(pool_max)
    return np.zeros_like(u) if top <= 0 else np.clip(u / top, 0.0, 1.0)


def function_samples(ens: EnsembleWeights, X, method: str, S: int = 1000, rng=None,
                     lambda_fraction: float = 0.05) -> np.ndarray:
    """(S, n, C) function values: q-draws for ``degp``, the members otherwise."""
    raw = ensemble_forward(ens, X).data
    if method != "degp":
        return raw
    M, n, C = raw.shape
    fb = function_batch(raw, lambda_fraction)
    rng = np.random.default_rng(0) if rng is None else rng
    return sample_functions(fb, S, rng).data.reshape(S, n, C)


def mixture_regression(f: np.ndarray, noise_var: float) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of an equal-weight mixture of N(f_s, noise_var)."""
    return f.mean(axis=0), f.var(axis=0) + noise_var


def predictive_from_samples(f: np.ndarray, kind: str, noise_var: float = 0.1,
                            temperature: float = 1.0) -> PredictiveSummary:
    S = f.shape[0]
    if kind == "gaussian":
        mean, var = mixture_regression(f, noise_var)
        return PredictiveSummary(S, mean=mean, var=var, uncertainty=f.var(axis=0).sum(axis=-1))
    p = softmax(f / temperature, axis=-1)
    return PredictiveSummary(S, probs=p.mean(axis=0), uncertainty=mutual_info(np.swapaxes(p, 0, 1)))


def posterior_predictive(ens: EnsembleWeights, X, method: str, kind: str = "gaussian", S: int = 1000,
                         rng=None, noise_var: float = 0.1, temperature: float = 1.0,
                         lambda_fraction: float = 0.05) -> PredictiveSummary:
    f = function_samples(ens, X, method, S, rng, lambda_fraction)
    return predictive_from_samples(f, kind, noise_var, temperature)


def entropy(p: np.ndarray, axis: int = -1) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    safe = np.where(p > 0, p, 1.0)
    return -np.sum(np.where(p > 0, p * np.log(safe), 0.0), axis=axis)


def mutual_info(prob_samples: np.ndarray) -> np.ndarray:
    """H(mean_s p_s) - mean_s H(p_s); input (..., S, C)."""
    p = np.asarray(prob_samples, dtype=np.float64)
    mi = entropy(p.mean(axis=-2)) - entropy(p).mean(axis=-1)
    return np.maximum(mi, 0.0)


def error_vs_uncertainty(predictions: np.ndarray, labels: np.ndarray, uncertainties: np.ndarray,
                         thresholds=None, wrong: np.ndarray | None = None) -> list[dict]:
    """Mean 0/1 error over points with normalized uncertainty <= tau.

    ``uncertainties`` must already be normalized to [0, 1] over the pool.
    Points flagged in ``wrong`` (e.g. out-of-distribution) count as errors.
    Empty buckets report ``error=None``.
    """
    thresholds = np.linspace(0.0, 1.0, 21) if thresholds is None else np.asarray(thresholds)
    err = (np.asarray(predictions) != np.asarray(labels)).astype(float)
    if wrong is not None:
        err = np.where(wrong, 1.0, err)
    u = np.asarray(uncertainties)
    rows = []
    for tau in thresholds:
        sel = u <= tau
        cnt = int(sel.sum())
        rows.append({"tau": float(tau), "error": float(err[sel].mean()) if cnt else None, "count": cnt})
    return rows


def ece(probs: np.ndarray, labels: np.ndarray, n_bins: int = ECE_BINS) -> float:
    """Expected calibration error with equal-width confidence bins."""
    probs = np.asarray(probs, dtype=np.float64)
    conf = probs.max(axis=1)
    correct = (probs.argmax(axis=1) == np.asarray(labels)).astype(float)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    # bins are (lo, hi]; confidence 0 can only occur with C = 0 so goes to the first bin
    which = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, n_bins - 1)
    total = 0.0
    n = len(conf)
    for b in range(n_bins):
        sel = which == b
        if sel.any():
            total += sel.sum() / n * abs(correct[sel].mean() - conf[sel].mean())
    return float(total)


def classification_metrics(probs: np.ndarray, labels: np.ndarray) -> dict:
    labels = np.asarray(labels, dtype=np.int64)
    p_true = np.asarray(probs)[np.arange(len(labels)), labels]
    nll = float(-np.mean(np.log(np.maximum(p_true, 1e-300))))
    return {"nll": nll, "accuracy": float(np.mean(np.argmax(probs, axis=1) == labels)), "ece": ece(probs, labels)}


def regression_metrics(mean: np.ndarray, var: np.ndarray, y: np.ndarray) -> dict:
    mean, var, y = (np.asarray(a, dtype=np.float64).reshape(len(y), -1) for a in (mean, var, y))
    nll = 0.5 * np.log(2 * np.pi * var) + 0.5 * (y - mean) ** 2 / var
    return {"nll": float(nll.sum(axis=1).mean()), "rmse": float(np.sqrt(np.mean((y - mean) ** 2)))}


def metrics(summary: PredictiveSummary, labels) -> dict:
    if summary.probs is not None:
        return classification_metrics(summary.probs, labels)
    return regression_metrics(summary.mean, summary.var, labels)


def logits_nll(logits: np.ndarray, labels: np.ndarray) -> float:
    lp = log_softmax(logits, axis=-1)
    return float(-np.mean(lp[np.arange(len(labels)), labels]))


def write_json(path, record: dict) -> None:
    Path(path).write_text(json.dumps(record, indent=2, sort_keys=True, default=float) + "\n")


def write_curve_csv(path, rows: list[dict], extra: dict | None = None) -> None:
    extra = extra or {}
    cols = ["tau", "error", "count", *extra]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([r["tau"], "" if r["error"] is None else repr(r["error"]), r["count"], *extra.values()])
