"""Experiment runners behind the command line.

Every runner takes a resolved :class:`ExperimentConfig` and an output
directory, writes CSV/JSON files there, and returns a :class:`RunResult`.
Files listed in ``volatile`` carry wall-clock measurements and are left out
of the bit-for-bit reproducibility comparison.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bandit import EnsembleAgent, MushroomBandit, OracleAgent, UniformAgent, WheelBandit, load_mushroom_csv, run_experiment
from .baselines import AnchorSet, nngp_regression_baseline, train_de, train_rde, train_rms
from .config import ExperimentConfig
from .data import Dataset, Standardizer, export_builtin_uci, gaussian_blobs, kfold_indices, load_regression_csv, sin_regression
from .evalx import (classification_metrics, error_vs_uncertainty, function_samples, mixture_regression,
                    predictive_from_samples, regression_metrics)
from .nets import EnsembleWeights, ensemble_forward, init_ensemble
from .trainer import TrainConfig, stream, train
from .validation import kernel_check

ENSEMBLE_METHODS = ("degp", "de", "rde", "rms")


@dataclass
class RunResult:
    summary: dict
    files: list[str] = field(default_factory=list)
    volatile: list[str] = field(default_factory=list)
    ok: bool = True


def _num(v) -> str:
    return repr(float(v))


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def train_method(method: str, ens: EnsembleWeights, data: Dataset, cfg: ExperimentConfig, tcfg: TrainConfig,
                 seed: int, input_dim: int):
    """Train one ensemble method; returns (weights, final temperature or None)."""
    if method == "degp":
        out, hist = train(ens, data, cfg.prior_spec(input_dim, seed), tcfg)
    elif method == "de":
        out, hist = train_de(ens, data, tcfg)
    elif method == "rde":
        out, hist = train_rde(ens, data, tcfg, cfg["train"]["weight_decay"])
    elif method == "rms":
        p = cfg["prior"]
        anchors = AnchorSet.draw(ens, seed, p["layer_weight_var"], p["layer_bias_var"])
        out, hist = train_rms(ens, data, tcfg, cfg["train"]["weight_decay"], anchors)
    else:
        raise ValueError(f"{method!r} is not an ensemble method")
    temp = hist[-1]["temperature"] if hist else None
    return out, temp


def regression_predict(method: str, ens, train_set: Dataset, X, cfg: ExperimentConfig, seed: int):
    """Predictive mean and variance (observation noise included) at ``X``; shape (n, C)."""
    noise = cfg["likelihood"]["noise_var"]
    if method == "nngp":
        p = cfg["prior"]
        g = nngp_regression_baseline(train_set, X, len(cfg["model"]["hidden"]), p["weight_var"], p["bias_var"], noise)
        return g.mean[:, None], g.var[:, None] + noise
    f = function_samples(ens, X, method, cfg["eval"]["samples"], stream(seed, 0, "predict"),
                         cfg["train"]["lambda_fraction"])
    return mixture_regression(f, noise)


# ---------------------------------------------------------------------------
# 1-D regression


def run_regress1d(cfg: ExperimentConfig, out: Path) -> RunResult:
    d, ev = cfg["data"], cfg["eval"]
    grid = np.linspace(ev["grid_low"], ev["grid_high"], ev["grid_points"])[:, None]
    summary: dict = {"seeds": {}}
    files = []
    for seed in cfg["experiment"]["seeds"]:
        data = sin_regression(seed, d["n"], d["noise_var"], d["low"], d["high"], d["outlier_shift"])
        tcfg = cfg.train_config(seed, "gaussian", (ev["grid_low"],), (ev["grid_high"],))
        base = init_ensemble(cfg.mlp_spec(1, 1), cfg["model"]["members"], seed, cfg["model"]["shared_trunk"])
        rows, per = [], {}
        for method in cfg["experiment"]["methods"]:
            ens = None
            if method in ENSEMBLE_METHODS:
                ens, _ = train_method(method, base, data, cfg, tcfg, seed, 1)
            X = np.concatenate([grid, data.X])
            mean, var = regression_predict(method, ens, data, X, cfg, seed)
            std = np.sqrt(var[:, 0])
            g_mean, g_std = mean[:len(grid), 0], std[:len(grid)]
            rows += [[_num(x), _num(m), _num(s), method] for x, m, s in zip(grid[:, 0], g_mean, g_std)]
            far = np.abs(grid[:, 0]) > ev["far"]
            stats = {"std_far": float(g_std[far].mean()), "std_train": float(std[len(grid):].mean())}
            if ens is not None:
                members = ensemble_forward(ens, grid).data[..., 0]
                stats["member_discrepancy"] = float((members.max(axis=0) - members.min(axis=0)).max())
                stats["kernel_trace"] = float(members.var(axis=0).mean())
            per[method] = stats
        name = f"regress1d_seed{seed}.csv"
        _write_csv(out / name, ["x", "mean", "std", "method"], rows)
        data_name = f"data_seed{seed}.csv"
        _write_csv(out / data_name, ["x", "y"], [[_num(x), _num(y)] for x, y in zip(data.X[:, 0], data.y[:, 0])])
        files += [name, data_name]
        summary["seeds"][str(seed)] = per
    _write_json(out / "summary.json", summary)
    return RunResult(summary, files + ["summary.json"])


# ---------------------------------------------------------------------------
# tabular regression, k-fold


def uci_datasets(cfg: ExperimentConfig, out: Path) -> list[tuple[str, Dataset, float]]:
    """(name, data, noise variance) triples; noise is in normalized target units."""
    d = cfg["data"]
    names = [Path(d["path"]).stem] if d["path"] else list(d["names"])
    noise = list(d["noise_vars"]) or [cfg["likelihood"]["noise_var"]] * len(names)
    if len(noise) != len(names):
        raise ValueError(f"data.noise_vars has {len(noise)} entries for {len(names)} datasets")
    if d["path"]:
        return [(names[0], load_regression_csv(d["path"]), noise[0])]
    return [(n, load_regression_csv(export_builtin_uci(n, out / "data" / f"{n}.csv")), v)
            for n, v in zip(names, noise)]


def run_uci(cfg: ExperimentConfig, out: Path) -> RunResult:
    rows, table = [], {}
    methods = cfg["experiment"]["methods"]
    for name, data, noise in uci_datasets(cfg, out):
        dcfg = cfg.copy().update({"likelihood": {"noise_var": noise}}, name)
        table[name] = {m: {"nll": [], "rmse": []} for m in methods}
        for seed in cfg["experiment"]["seeds"]:
            for fold, (tr, te) in enumerate(kfold_indices(len(data), cfg["data"]["folds"], seed)):
                sx, sy = Standardizer.fit(data.X[tr]), Standardizer.fit(data.y[tr])
                train_set = Dataset(sx.transform(data.X[tr]), sy.transform(data.y[tr]))
                Xte, yte = sx.transform(data.X[te]), data.y[te]
                d = data.X.shape[1]
                run_seed = seed * 1000 + fold
                tcfg = dcfg.train_config(run_seed, "gaussian", train_set.X.min(axis=0), train_set.X.max(axis=0))
                base = init_ensemble(cfg.mlp_spec(d, 1), cfg["model"]["members"], run_seed,
                                     cfg["model"]["shared_trunk"])
                for method in methods:
                    ens = None
                    if method in ENSEMBLE_METHODS:
                        ens, _ = train_method(method, base, train_set, dcfg, tcfg, run_seed, d)
                    mean, var = regression_predict(method, ens, train_set, Xte, dcfg, run_seed)
                    m = regression_metrics(mean, var, sy.transform(yte))
                    # back to the original target units
                    nll = m["nll"] + float(np.log(sy.std[0]))
                    rmse = float(np.sqrt(np.mean((sy.inverse(mean) - yte) ** 2)))
                    table[name][method]["nll"].append(nll)
                    table[name][method]["rmse"].append(rmse)
                    rows.append([name, method, str(seed), str(fold), _num(nll), _num(rmse)])
    _write_csv(out / "uci_folds.csv", ["dataset", "method", "seed", "fold", "nll", "rmse"], rows)
    margin = cfg["eval"]["nll_margin"]
    report = {"datasets": {}, "margin": margin}
    for name, res in table.items():
        entry = {m: {"nll_mean": float(np.mean(v["nll"])), "nll_se": float(np.std(v["nll"]) / np.sqrt(len(v["nll"]))),
                     "rmse_mean": float(np.mean(v["rmse"])), "rmse_se": float(np.std(v["rmse"]) / np.sqrt(len(v["rmse"])))}
                 for m, v in res.items()}
        if "degp" in entry and "de" in entry:
            ok = entry["degp"]["nll_mean"] <= entry["de"]["nll_mean"] + margin
            entry["direction_check"] = "pass" if ok else "soft-fail"
        report["datasets"][name] = entry
    _write_json(out / "report.json", report)
    files = ["uci_folds.csv", "report.json"]
    if not cfg["data"]["path"]:
        files += [f"data/{n}.csv" for n in cfg["data"]["names"]]
    return RunResult(report, files)


# ---------------------------------------------------------------------------
# synthetic classification


def ood_points(seed: int, n: int, dim: int, r_low: float = 8.0, r_high: float = 12.0) -> np.ndarray:
    """Points on an annulus well outside the class clusters."""
    rng = np.random.default_rng([seed, 11])
    direction = rng.standard_normal((n, dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    return direction * rng.uniform(r_low, r_high, size=(n, 1))


def run_classify_synth(cfg: ExperimentConfig, out: Path) -> RunResult:
    d = cfg["data"]
    K = d["classes"]
    metrics_rows, curve_rows, summary = [], [], {}
    for seed in cfg["experiment"]["seeds"]:
        train_set = gaussian_blobs(seed, d["n"], K)
        test = gaussian_blobs(seed + 10_000, d["n_test"], K)
        X_ood = ood_points(seed, d["n_ood"], train_set.X.shape[1])
        dim = train_set.X.shape[1]
        tcfg = cfg.train_config(seed, "categorical", train_set.X.min(axis=0), train_set.X.max(axis=0))
        base = init_ensemble(cfg.mlp_spec(dim, K), cfg["model"]["members"], seed, cfg["model"]["shared_trunk"])
        summary[str(seed)] = {}
        for method in cfg["experiment"]["methods"]:
            if method not in ENSEMBLE_METHODS:
                continue
            ens, temp = train_method(method, base, train_set, cfg, tcfg, seed, dim)
            T = temp if temp is not None else cfg["likelihood"]["temperature"]
            pool = np.concatenate([test.X, X_ood])
            f = function_samples(ens, pool, method, cfg["eval"]["samples"], stream(seed, 0, "predict"),
                                 cfg["train"]["lambda_fraction"])
            s = predictive_from_samples(f, "categorical", temperature=T)
            n_in = len(test)
            m = classification_metrics(s.probs[:n_in], test.y)
            m["temperature"] = float(T)
            m["mi_in"] = float(s.uncertainty[:n_in].mean())
            m["mi_ood"] = float(s.uncertainty[n_in:].mean())
            labels = np.concatenate([test.y, np.full(len(X_ood), -1)])
            wrong = np.concatenate([np.zeros(n_in, bool), np.ones(len(X_ood), bool)])
            curve = error_vs_uncertainty(s.probs.argmax(axis=1), labels, s.normalized_uncertainty(), wrong=wrong)
            for r in curve:
                curve_rows.append([_num(r["tau"]), "" if r["error"] is None else _num(r["error"]), str(r["count"]),
                                   method, str(seed)])
            metrics_rows.append([method, str(seed), *(_num(m[k]) for k in ("nll", "accuracy", "ece", "temperature",
                                                                           "mi_in", "mi_ood"))])
            summary[str(seed)][method] = m
    _write_csv(out / "metrics.csv", ["method", "seed", "nll", "accuracy", "ece", "temperature", "mi_in", "mi_ood"],
               metrics_rows)
    _write_csv(out / "curves.csv", ["tau", "error", "count", "method", "seed"], curve_rows)
    _write_json(out / "metrics.json", summary)
    return RunResult(summary, ["metrics.csv", "curves.csv", "metrics.json"])


# ---------------------------------------------------------------------------
# contextual bandit


def bandit_setup(cfg: ExperimentConfig):
    """(make_env, agent factories) for the configured environment and methods."""
    b = cfg["bandit"]
    if b["env"] == "wheel":
        def make_env(seed):
            return WheelBandit(seed, delta=b["delta"])
    elif b["env"] == "mushroom":
        if not cfg["data"]["path"]:
            raise ValueError("the mushroom environment needs data.path")
        feats, poison = load_mushroom_csv(cfg["data"]["path"])

        def make_env(seed):
            return MushroomBandit(feats, poison, seed)
    else:
        raise ValueError(f"unknown bandit environment {b['env']!r}")

    def ensemble_factory(method):
        def make(env, seed):
            tcfg = cfg.train_config(seed)
            return EnsembleAgent(method, env.arms, env.context_dim, cfg["model"]["hidden"], cfg["model"]["members"],
                                 tcfg, cfg.prior_spec(env.context_dim, seed), b["cadence"], seed,
                                 cfg["train"]["weight_decay"], cfg["train"]["lambda_fraction"], b["reward_scale"])
        return make

    agents = {}
    for method in cfg["experiment"]["methods"]:
        if method == "uniform":
            agents[method] = lambda env, seed: UniformAgent(env.arms)
        elif method == "oracle":
            agents[method] = lambda env, seed: OracleAgent(env)
        elif method in ENSEMBLE_METHODS:
            agents[method] = ensemble_factory(method)
        else:
            raise ValueError(f"method {method!r} cannot act in a bandit")
    return make_env, agents


def bandit_verdict(final_means: dict, min_ratio: float) -> dict:
    out: dict = {}
    if "degp" in final_means and "uniform" in final_means:
        out["ratio_to_uniform"] = final_means["degp"] / final_means["uniform"]
        out["beats_uniform"] = bool(final_means["degp"] >= min_ratio * final_means["uniform"])
    if "degp" in final_means and "de" in final_means:
        out["at_least_de"] = bool(final_means["degp"] >= final_means["de"])
    return out


def run_bandit(cfg: ExperimentConfig, out: Path) -> RunResult:
    b = cfg["bandit"]
    seeds = list(cfg["experiment"]["seeds"])
    make_env, agents = bandit_setup(cfg)
    res = run_experiment(make_env, agents, b["rounds"], seeds)
    rows = []
    for method, r in res.items():
        for si, seed in enumerate(seeds):
            rows += [[str(t + 1), _num(v), method, str(seed)] for t, v in enumerate(r["per_seed"][si])]
    _write_csv(out / "cumulative.csv", ["round", "reward_cum", "method", "seed"], rows)
    finals = {m: float(r["mean"][-1]) for m, r in res.items()}
    summary = {"final_mean": finals,
               "final_per_seed": {m: [float(v) for v in r["per_seed"][:, -1]] for m, r in res.items()},
               "checks": bandit_verdict(finals, b["min_ratio"])}
    _write_json(out / "summary.json", summary)
    return RunResult(summary, ["cumulative.csv", "summary.json"])


# ---------------------------------------------------------------------------
# numerics validation


def run_kernel_check(cfg: ExperimentConfig, out: Path) -> RunResult:
    k = cfg["kernel"]
    res = kernel_check(k["instances"], k["logdet_instances"], k["timing_d"], k["timing_m"], k["mc_samples"],
                       k["pairs"], k["seed"])
    _write_json(out / "report.json", res["report"])
    _write_json(out / "timing.json", res["timing"])
    (out / "summary.txt").write_text(res["summary"])
    summary = {"passed": res["passed"], **res["report"], "timing": res["timing"]}
    return RunResult(summary, ["report.json", "timing.json", "summary.txt"], ["timing.json", "summary.txt"],
                     ok=res["passed"])


RUNNERS = {"regress1d": run_regress1d, "uci": run_uci, "classify-synth": run_classify_synth,
           "bandit": run_bandit, "kernel-check": run_kernel_check}
