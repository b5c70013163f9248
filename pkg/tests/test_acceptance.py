"""End-to-end acceptance criteria, one test each.

Each test records a ``PASS``/``FAIL`` line that the terminal summary prints
under "acceptance criteria".  The bandit and UCI runs take several minutes.
"""
import json
import time

import numpy as np
import pytest

from degp import posterior
from degp.cli import main
from degp.config import parse_overrides, resolve
from degp.data import sin_regression
from degp.evalx import ece, mixture_regression, mutual_info
from degp.experiments import RUNNERS
from degp.ndcore import Tape, Tensor
from degp.nets import MlpSpec, init_ensemble
from degp.posterior import function_batch, sample_functions
from degp.priorkern import PriorSpec
from degp.trainer import Likelihood, Measurement, TrainConfig, felbo_loss
from degp.validation import check_kl, check_logdet, check_mc_kernel, timing_logdet

from conftest import ACCEPTANCE_LINES, central_diff, rel_err


def report(number: int, passed: bool, text: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} {text}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def run_kind(preset, out, seeds, methods=None, extra=()):
    cfg = resolve(preset, None, parse_overrides(extra))
    cfg.update({"experiment": {"seeds": tuple(seeds)}}, "test")
    if methods:
        cfg.update({"experiment": {"methods": tuple(methods)}}, "test")
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    res = RUNNERS[cfg["experiment"]["kind"]](cfg.validate(), out)
    return res, time.perf_counter() - t0


def test_c1_structured_kl_oracle():
    t0 = time.perf_counter()
    res = check_kl(200, tol=1e-8)
    dt = time.perf_counter() - t0
    ok = res.passed and dt < 10
    report(1, ok, f"max rel err {res.max_error:.2e} over {res.instances} instances (tol 1e-8), {dt:.2f}s (< 10s)")
    assert ok


def test_c2_determinant_lemma():
    res = check_logdet(100, tol=1e-9)
    tim = timing_logdet(2560, 10)
    ok = res.passed and tim["speedup"] >= 10
    report(2, ok, f"max rel err {res.max_error:.2e} (tol 1e-9); speedup at D=2560, M=10: {tim['speedup']:.0f}x (>= 10x)")
    assert ok


def test_c3_felbo_gradient(monkeypatch):
    t0 = time.perf_counter()
    data = sin_regression(0).subset(np.arange(4))
    ens = init_ensemble(MlpSpec(1, (8,), 1), 3, 0)
    rng_b = np.random.default_rng(5)
    for k in ens.params:
        if k.startswith("b"):
            ens.params[k] = rng_b.normal(0, 0.1, ens.params[k].shape)
    prior = PriorSpec(1, (16,), seed=0)
    cfg = TrainConfig(lambda_fraction=0.05, samples=16, measurement=Measurement((-2.0,), (2.0,), 4),
                      likelihood=Likelihood(noise_var=0.1))
    # lambda enters the objective as a constant (no gradient); hold it fixed under perturbation too
    lam0 = felbo_loss(ens, data, prior, cfg, np.random.default_rng(0))[1].lam
    monkeypatch.setattr(posterior, "lambda_from_trace", lambda Gc, fraction: lam0)
    leaves = {k: Tensor(v) for k, v in ens.params.items()}
    with Tape() as tape:
        tape.watch(*leaves.values())
        loss, _ = felbo_loss(ens, data, prior, cfg, np.random.default_rng(0), leaves)
    grads = dict(zip(leaves, tape.gradient(loss, list(leaves.values()))))
    worst = 0.0
    for k, v in ens.params.items():
        fd = central_diff(lambda a, k=k: felbo_loss(ens, data, prior, cfg, np.random.default_rng(0),
                                                    {**ens.params, k: a})[0].item(), v, 1e-4)
        worst = max(worst, rel_err(grads[k], fd))
    dt = time.perf_counter() - t0
    ok = worst < 1e-3 and dt < 60
    report(3, ok, f"max rel err {worst:.2e} over all weights of a 1-8-1 net, M=3 (tol 1e-3), {dt:.2f}s (< 60s)")
    assert ok


def test_c4_sampling_moments():
    rng = np.random.default_rng(0)
    raw = rng.standard_normal((4, 8))
    fb = function_batch(raw, 0.05)
    m, G, lam = fb.mean.data, fb.Gc.data, fb.lam
    K = G @ G.T / 4 + lam * np.eye(8)
    f = sample_functions(fb, 200_000, np.random.default_rng(1)).data
    em = np.linalg.norm(f.mean(0) - m) / np.linalg.norm(m)
    eK = np.linalg.norm(np.cov(f, rowvar=False) - K) / np.linalg.norm(K)
    ok = em < 0.02 and eK < 0.02
    report(4, ok, f"relative Frobenius error: mean {em:.2e}, covariance {eK:.2e} (tol 2e-2), D=8, M=4")
    assert ok


@pytest.fixture(scope="module")
def linear_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("c5")
    return run_kind("toy1d", out, [0], ["degp", "de"]) + (out,)


def test_c5_linear_collapse(linear_run):
    res, dt, _ = linear_run
    s = res.summary["seeds"]["0"]
    disc = s["de"]["member_discrepancy"]
    ratio = s["degp"]["kernel_trace"] / max(s["de"]["kernel_trace"], 1e-300)
    ok = disc < 1e-3 and ratio >= 10 and dt < 300
    report(5, ok, f"DE discrepancy {disc:.1e} (< 1e-3); kernel trace DE-GP {s['degp']['kernel_trace']:.3g} "
                  f"vs DE {s['de']['kernel_trace']:.3g} (ratio >= 10); {dt:.1f}s (< 300s)")
    assert ok


@pytest.fixture(scope="module")
def far_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("c6")
    return run_kind("toy1d-h1", out, [0, 1, 2], ["degp"]) + (out,)


def test_c6_far_from_data_uncertainty(far_run):
    res, _, _ = far_run
    pairs = {s: (v["degp"]["std_far"], v["degp"]["std_train"]) for s, v in res.summary["seeds"].items()}
    ok = all(far > train for far, train in pairs.values())
    text = ", ".join(f"seed {s}: {a:.3f} > {b:.3f}" for s, (a, b) in pairs.items())
    report(6, ok, f"std on |x| > 1.8 vs at training inputs: {text}")
    assert ok


def test_c7_mc_prior_convergence():
    res = check_mc_kernel(2000, 50, tol=0.05)
    report(7, res.passed, f"max rel err {res.max_error:.2e} on 50 pairs at S=2000 (tol 5e-2)")
    assert res.passed


def test_c8_metric_oracles():
    errs = []
    # mutual information: two opposite one-hot rows and a fixed 3x3 case by hand
    errs.append(abs(mutual_info(np.array([[1.0, 0.0], [0.0, 1.0]])) - np.log(2)))
    p = np.array([[0.2, 0.3, 0.5], [0.6, 0.3, 0.1], [0.1, 0.1, 0.8]])
    H = lambda q: -sum(x * np.log(x) for x in q)
    errs.append(abs(mutual_info(p) - (H(p.mean(0)) - np.mean([H(r) for r in p]))))
    # ECE: bins by hand
    probs = np.array([[0.9, 0.1], [0.9, 0.1], [0.3, 0.7], [0.55, 0.45]])
    labels = np.array([0, 1, 1, 1])
    errs.append(abs(ece(probs, labels) - (2 / 4 * abs(0.5 - 0.9) + 1 / 4 * abs(1 - 0.7) + 1 / 4 * abs(0 - 0.55))))
    # mixture variance by brute force over a fine grid
    f = np.array([[[-1.0]], [[0.5]], [[2.0]]])
    _, var = mixture_regression(f, 0.3)
    y = np.linspace(-12, 14, 400_001)
    dens = sum(np.exp(-(y - c) ** 2 / 0.6) / np.sqrt(0.6 * np.pi) for c in (-1.0, 0.5, 2.0)) / 3
    mu = np.trapezoid(y * dens, y) if hasattr(np, "trapezoid") else np.trapz(y * dens, y)
    ey2 = np.trapezoid(y * y * dens, y) if hasattr(np, "trapezoid") else np.trapz(y * y * dens, y)
    errs.append(abs(var[0, 0] - (ey2 - mu ** 2)))
    worst = max(errs)
    ok = worst < 1e-10
    report(8, ok, f"max abs err {worst:.1e} across mutual information, ECE and mixture variance (tol 1e-10)")
    assert ok


@pytest.mark.slow
def test_c9_bandit_direction(tmp_path):
    res, dt = run_kind("bandit", tmp_path, [0, 1, 2, 3, 4])
    fm, chk = res.summary["final_mean"], res.summary["checks"]
    ok = chk["beats_uniform"] and chk["at_least_de"] and dt < 900
    report(9, ok, f"seed-mean cumulative reward DE-GP {fm['degp']:.0f}, DE {fm['de']:.0f}, uniform {fm['uniform']:.0f} "
                  f"(ratio to uniform {chk['ratio_to_uniform']:.2f} >= 1.2, DE-GP >= DE); {dt:.0f}s (< 900s)")
    assert ok


@pytest.mark.slow
def test_c10_uci_direction(tmp_path):
    res, _ = run_kind("uci", tmp_path, [0])
    data = res.summary["datasets"]
    status = {n: d["direction_check"] for n, d in data.items()}
    text = "; ".join(f"{n}: DE-GP {d['degp']['nll_mean']:.3f} vs DE {d['de']['nll_mean']:.3f} -> {d['direction_check']}"
                     for n, d in data.items())
    report(10, all(s == "pass" for s in status.values()), f"(soft) test NLL, margin 0.05: {text}")
    # soft criterion: the outcome is recorded in the report, not hard-failed
    stored = json.loads((tmp_path / "report.json").read_text())
    assert {n: d["direction_check"] for n, d in stored["datasets"].items()} == status
    assert len(status) == 2


# full-scale 1-D runs; the slower kinds are shortened
FAST = {
    "uci": ["train.epochs=3", "data.folds=2", "eval.samples=50"],
    "classify-synth": ["train.epochs=2", "data.n=200", "eval.samples=50"],
    "bandit": ["bandit.rounds=150", "train.epochs=5"],
    "kernel-check": [],
}


def test_c11_determinism(tmp_path, capsys):
    checked, runs = [], []
    for preset, seeds in (("toy1d", "0"), ("toy1d-h1", "1"), ("uci", "0"), ("classify", "0,1"),
                          ("bandit", "0,1"), ("kernel-check", "0")):
        out = tmp_path / preset
        kind = resolve(preset)["experiment"]["kind"]
        kind_sets = [a for s in FAST.get(kind, []) for a in ("--set", s)]
        code = main([kind, "--preset", preset, "--seed", seeds, "--out", str(out), *kind_sets])
        assert code == 0, preset
        runs.append((preset, out))
    mismatches = []
    for preset, out in runs:
        code = main(["rerun", str(out / "manifest.json"), "--out", str(tmp_path / f"{preset}-again"), "--check"])
        n = len(json.loads((out / "manifest.json").read_text())["outputs"])
        checked.append(f"{preset} ({n} files)")
        if code != 0:
            mismatches.append(preset)
    capsys.readouterr()
    ok = not mismatches
    report(11, ok, "rerun from manifest matches bit-for-bit: " + ", ".join(checked)
           + (f"; mismatched: {mismatches}" if mismatches else ""))
    assert ok
