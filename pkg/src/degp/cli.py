"""Command-line entry point.

    degp <kind> [--preset NAME] [--config FILE] [--seed S] [--method M] [--set section.key=value] [--out DIR]
    degp rerun MANIFEST [--out DIR] [--check]
    degp config [--preset NAME] [--config FILE] [--schema]

``kind`` is one of regress1d, uci, classify-synth, bandit, kernel-check.
Without ``--out`` results go to ``$DEGP_OUT_ROOT/<kind>`` (default root
``results``).  Exit status: 0 on success, 1 when a validation suite or a
reproducibility check fails, 2 on configuration errors.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .config import KINDS, PRESETS, ConfigError, ExperimentConfig, describe_schema, parse_overrides, resolve
from .experiments import RUNNERS, RunResult

OUT_ROOT_ENV = "DEGP_OUT_ROOT"
MANIFEST = "manifest.json"

log = logging.getLogger("degp")


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def versions() -> dict:
    return {"degp": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "platform": platform.platform()}


def run(cfg: ExperimentConfig, out: Path, argv=None, preset=None) -> tuple[RunResult, dict]:
    """Run the configured experiment into ``out`` and write its manifest."""
    cfg.validate()
    kind = cfg["experiment"]["kind"]
    out.mkdir(parents=True, exist_ok=True)
    result = RUNNERS[kind](cfg, out)
    (out / "config.ini").write_text(cfg.to_ini())
    manifest = {
        "kind": kind,
        "preset": preset,
        "argv": list(argv) if argv is not None else None,
        "config": cfg.to_dict(),
        "seeds": list(cfg["experiment"]["seeds"]),
        "versions": versions(),
        "outputs": {f: sha256(out / f) for f in result.files},
        "volatile": list(result.volatile),
        "ok": result.ok,
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return result, manifest


def compare_outputs(a: dict, b: dict) -> list[str]:
    """Names of non-volatile outputs whose hashes differ or are missing."""
    skip = set(a.get("volatile", ())) | set(b.get("volatile", ()))
    names = (set(a["outputs"]) | set(b["outputs"])) - skip
    return sorted(n for n in names if a["outputs"].get(n) != b["outputs"].get(n))


def _multi(values) -> tuple[str, ...]:
    out: list[str] = []
    for v in values or ():
        out += [t for t in v.split(",") if t]
    return tuple(out)


def _default_out(kind: str) -> Path:
    return Path(os.environ.get(OUT_ROOT_ENV, "results")) / kind


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="degp", description="Ensemble-GP experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run the {kind} experiment")
        p.add_argument("--preset", help="named recipe: " + ", ".join(sorted(PRESETS)))
        p.add_argument("--config", help="INI file; overrides the preset")
        p.add_argument("--seed", action="append", help="seed(s); repeat or comma-separate")
        p.add_argument("--method", action="append", help="method(s); repeat or comma-separate")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a single config key")
        p.add_argument("--out", help=f"output directory (default ${OUT_ROOT_ENV}/{kind})")
    p = sub.add_parser("rerun", help="re-run an experiment from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", help="output directory (default: <original>-rerun)")
    p.add_argument("--check", action="store_true", help="exit 1 unless outputs match bit-for-bit")
    p = sub.add_parser("config", help="print a resolved config or the full schema")
    p.add_argument("--preset")
    p.add_argument("--config")
    p.add_argument("--set", action="append", default=[])
    p.add_argument("--schema", action="store_true")
    return parser


def _resolve_args(args, kind: str | None) -> ExperimentConfig:
    overrides = parse_overrides(args.set)
    cfg = resolve(args.preset, args.config, None)
    if kind is not None:
        cfg.update({"experiment": {"kind": kind}}, "command line")
    if getattr(args, "seed", None):
        cfg.update({"experiment": {"seeds": tuple(int(s) for s in _multi(args.seed))}}, "--seed")
    if getattr(args, "method", None):
        cfg.update({"experiment": {"methods": _multi(args.method)}}, "--method")
    return cfg.update(overrides, "--set")


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "config":
            if args.schema:
                print(describe_schema())
            else:
                print(_resolve_args(args, None).validate().to_ini())
            return 0
        if args.command == "rerun":
            return _rerun(args)
        cfg = _resolve_args(args, args.command)
        out = Path(args.out) if args.out else _default_out(args.command)
        result, _ = run(cfg, out, argv, args.preset)
    except (ConfigError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(json.dumps(result.summary, indent=2, sort_keys=True, default=float))
    print(f"results written to {out}")
    if not result.ok:
        print("validation FAILED", file=sys.stderr)
        return 1
    return 0


def _rerun(args) -> int:
    path = Path(args.manifest)
    if path.is_dir():
        path = path / MANIFEST
    if not path.is_file():
        print(f"error: manifest not found: {path}", file=sys.stderr)
        return 2
    old = json.loads(path.read_text())
    cfg = ExperimentConfig(old["config"])
    out = Path(args.out) if args.out else path.parent.with_name(path.parent.name + "-rerun")
    result, new = run(cfg, out, old.get("argv"), old.get("preset"))
    diff = compare_outputs(old, new)
    if diff:
        print("outputs differ: " + ", ".join(diff))
    else:
        print(f"all {len(new['outputs']) - len(new['volatile'])} reproducible outputs match bit-for-bit")
    if args.check and diff:
        return 1
    return 0 if result.ok else 1


if __name__ == "__main__":
    raise SystemExit(main())
