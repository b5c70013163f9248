"""Datasets: containers, generators and CSV ingestion."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class Dataset:
    """Inputs ``X`` (n x d) and targets ``y``.

    Regression targets are (n x C) floats; classification targets are
    integer labels of shape (n,).  ``mask`` (n x C, optional) selects which
    outputs carry a likelihood term.
    """
    X: np.ndarray
    y: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        self.y = np.asarray(self.y)
        if self.y.dtype.kind == "f" and self.y.ndim == 1:
            self.y = self.y[:, None]
        if len(self.y) != len(self.X):
            raise ValueError(f"{len(self.X)} inputs but {len(self.y)} targets")
        if self.mask is not None:
            self.mask = np.asarray(self.mask, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.X)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], None if self.mask is None else self.mask[idx])


def sin_regression(seed: int = 0, n: int = 8, noise_var: float = 0.1, low: float = -1.5,
                   high: float = 1.5, outlier_shift: float = -1.2) -> Dataset:
    """y = sin(2x) + noise at ``n`` uniform inputs; the rightmost target is shifted."""
    rng = np.random.default_rng([seed, 2024])
    x = np.sort(rng.uniform(low, high, size=n))
    y = np.sin(2 * x) + rng.normal(0.0, np.sqrt(noise_var), size=n)
    y[np.argmax(x)] += outlier_shift
    return Dataset(x[:, None], y[:, None])


def gaussian_blobs(seed: int = 0, n: int = 600, classes: int = 3, dim: int = 2, spread: float = 1.0,
                   radius: float = 3.0) -> Dataset:
    """Isotropic Gaussian clusters with centers on a circle (first two dims)."""
    rng = np.random.default_rng([seed, 7])
    labels = rng.integers(0, classes, size=n)
    angles = 2 * np.pi * np.arange(classes) / classes
    centers = np.zeros((classes, dim))
    centers[:, 0] = radius * np.cos(angles)
    centers[:, 1 % dim] += radius * np.sin(angles) if dim > 1 else 0.0
    X = centers[labels] + spread * rng.standard_normal((n, dim))
    return Dataset(X, labels.astype(np.int64))


def load_regression_csv(path, target: int | str = -1) -> Dataset:
    """Numeric CSV with a header row; ``target`` selects the target column."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset not found: {path}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in r] for r in body if r], dtype=np.float64)
    col = header.index(target) if isinstance(target, str) else target % len(header)
    X = np.delete(data, col, axis=1)
    return Dataset(X, data[:, col:col + 1])


def kfold_indices(n: int, k: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    perm = np.random.default_rng([seed, 5]).permutation(n)
    folds = np.array_split(perm, k)
    return [(np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i])), np.sort(folds[i]))
            for i in range(k)]


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, A: np.ndarray) -> "Standardizer":
        std = A.std(axis=0)
        return cls(A.mean(axis=0), np.where(std > 0, std, 1.0))

    def transform(self, A: np.ndarray) -> np.ndarray:
        return (A - self.mean) / self.std

    def inverse(self, A: np.ndarray) -> np.ndarray:
        return A * self.std + self.mean


def export_builtin_uci(name: str, path) -> Path:
    """Write one of the bundled tabular regression sets to CSV (target last).

    ``diabetes`` comes from scikit-learn, ``statecrime`` from statsmodels.
    """
    path = Path(path)
    if name == "diabetes":
        from sklearn.datasets import load_diabetes
        d = load_diabetes()
        X, y, cols = d.data, d.target, list(d.feature_names)
    elif name == "statecrime":
        from statsmodels.datasets import statecrime
        df = statecrime.load_pandas().data
        y = df["violent"].to_numpy(dtype=float)
        feats = df.drop(columns=["violent"])
        X, cols = feats.to_numpy(dtype=float), list(feats.columns)
    else:
        raise ValueError(f"unknown bundled dataset {name!r}")
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*cols, "target"])
        for xi, yi in zip(X, y):
            w.writerow([repr(float(v)) for v in xi] + [repr(float(yi))])
    return path
