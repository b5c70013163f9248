"""Oracle suites comparing the structured numerics with dense references.

Each check returns a :class:`CheckResult`; ``kernel_check`` bundles them
into the report written by the ``kernel-check`` command.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass

import numpy as np

from . import ndcore as nd
from .gaussops import GaussianMeasure, KronIdentity, LowRankDiag, kl_dense, kl_structured, kron_apply_inverse
from .priorkern import PriorSpec, arccos_kernel, mc_kernel


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_error: float
    tolerance: float
    instances: int
    detail: str = ""

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark} {self.name}: max error {self.max_error:.3e} (tol {self.tolerance:g}, n={self.instances}) {self.detail}".rstrip()


def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


def random_pd(rng: np.random.Generator, n: int) -> np.ndarray:
    A = rng.standard_normal((n, n))
    return A @ A.T / n + 0.1 * np.eye(n)


def random_kl_instance(rng: np.random.Generator, max_n=12, max_c=4, max_m=8):
    n = int(rng.integers(1, max_n + 1))
    C = int(rng.integers(1, max_c + 1))
    M = int(rng.integers(1, max_m + 1))
    lam = float(10 ** rng.uniform(-4, 0))
    D = n * C
    raw = rng.standard_normal((M, D))
    Gc = (raw - raw.mean(axis=0)).T
    m = rng.standard_normal(D)
    return m, Gc, lam, random_pd(rng, n), C


def check_kl(instances: int = 200, seed: int = 0, tol: float = 1e-8) -> CheckResult:
    rng = np.random.default_rng([seed, 1])
    worst = 0.0
    for _ in range(instances):
        m, Gc, lam, B, C = random_kl_instance(rng)
        q = GaussianMeasure(m, LowRankDiag(Gc, lam))
        p = GaussianMeasure(np.zeros_like(m), KronIdentity(B, C))
        worst = max(worst, _rel(kl_structured(m, Gc, lam, B, C).item(), kl_dense(q, p)))
    return CheckResult("kl_structured_vs_dense", worst <= tol, worst, tol, instances)


def check_logdet(instances: int = 100, seed: int = 0, tol: float = 1e-9) -> CheckResult:
    rng = np.random.default_rng([seed, 2])
    worst = 0.0
    for _ in range(instances):
        D, M = int(rng.integers(1, 33)), int(rng.integers(1, 9))
        Gc = rng.standard_normal((D, M))
        lam = float(10 ** rng.uniform(-4, 0))
        dense = nd.dense_logdet(Gc @ Gc.T / M + lam * np.eye(D))
        worst = max(worst, _rel(nd.lowrank_logdet(Gc, lam).item(), dense))
    return CheckResult("lowrank_logdet_vs_dense", worst <= tol, worst, tol, instances)


def check_kron_inverse(instances: int = 50, seed: int = 0, tol: float = 1e-10) -> CheckResult:
    rng = np.random.default_rng([seed, 3])
    worst = 0.0
    for _ in range(instances):
        n, C, k = int(rng.integers(1, 9)), int(rng.integers(1, 5)), int(rng.integers(1, 4))
        B = random_pd(rng, n)
        V = rng.standard_normal((n * C, k))
        got = kron_apply_inverse(nd.cholesky_array(B), V, C)
        want = np.linalg.solve(np.kron(B, np.eye(C)), V)
        worst = max(worst, float(np.max(np.abs(got - want)) / max(np.max(np.abs(want)), 1e-300)))
    return CheckResult("kron_apply_inverse_vs_dense", worst <= tol, worst, tol, instances)


def check_mc_kernel(samples: int = 2000, pairs: int = 50, seed: int = 0, tol: float = 0.05,
                    width: int = 64, input_dim: int = 3) -> CheckResult:
    """MC projector kernel vs the arc-cosine recursion for one hidden ReLU layer."""
    rng = np.random.default_rng([seed, 4])
    prior = PriorSpec(input_dim, (width,), samples=samples, seed=seed)
    X = rng.standard_normal((pairs, input_dim))
    X2 = rng.standard_normal((pairs, input_dim))
    mc = np.array([mc_kernel(prior, X[i:i + 1], X2[i:i + 1])[0, 0] for i in range(pairs)])
    exact = np.array([arccos_kernel(X[i:i + 1], X2[i:i + 1], 1, prior.weight_var, prior.bias_var)[0, 0]
                      for i in range(pairs)])
    err = float(np.max(np.abs(mc - exact) / np.abs(exact)))
    return CheckResult("mc_nngp_vs_arccos", err <= tol, err, tol, pairs, f"S={samples}")


def _best_time(fn, repeats: int) -> float:
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def timing_logdet(D: int = 2560, M: int = 10, seed: int = 0, repeats: int = 3, min_speedup: float = 10.0) -> dict:
    """Wall time of the determinant-lemma path against a dense Cholesky."""
    rng = np.random.default_rng([seed, 5])
    Gc = rng.standard_normal((D, M))
    lam = 0.1
    K = Gc @ Gc.T / M + lam * np.eye(D)
    fast = _best_time(lambda: nd.lowrank_logdet(Gc, lam), repeats)
    dense = _best_time(lambda: nd.dense_logdet(Gc @ Gc.T / M + lam * np.eye(D)), repeats)
    chol_only = _best_time(lambda: nd.cholesky_array(K), repeats)
    speedup = dense / fast
    return {"D": D, "M": M, "lowrank_seconds": fast, "dense_seconds": dense, "dense_cholesky_only_seconds": chol_only,
            "speedup": speedup, "min_speedup": min_speedup, "passed": bool(speedup >= min_speedup)}


def kernel_check(instances=200, logdet_instances=100, timing_d=2560, timing_m=10, mc_samples=2000, pairs=50,
                 seed=0, timing=True) -> dict:
    checks = [check_kl(instances, seed), check_logdet(logdet_instances, seed), check_kron_inverse(50, seed),
              check_mc_kernel(mc_samples, pairs, seed)]
    report = {"checks": [asdict(c) for c in checks], "passed": all(c.passed for c in checks)}
    lines = [c.line() for c in checks]
    tim = None
    if timing:
        tim = timing_logdet(timing_d, timing_m, seed)
        lines.append(f"{'PASS' if tim['passed'] else 'FAIL'} lowrank_logdet_timing: D={tim['D']} M={tim['M']} "
                     f"lowrank {tim['lowrank_seconds'] * 1e3:.2f} ms, dense {tim['dense_seconds'] * 1e3:.2f} ms, "
                     f"speedup {tim['speedup']:.1f}x (need {tim['min_speedup']:g}x)")
    return {"report": report, "timing": tim, "summary": "\n".join(lines) + "\n",
            "passed": report["passed"] and (tim is None or tim["passed"])}

