"""Command-line front end.

Subcommands:
    synth        solve the vertex-data gain synthesis at the configured state
    simulate     paired adaptive-vs-baseline closed-loop run, files to --out
    sweep        grid of constant-parameter runs with randomized x0
    export-sdpa  write one control step's conic program in SDPA sparse format
    check        validate emitted artifacts (dataset manifest or run directory)

All failures print a one-object JSON diagnostic and exit with status 2;
`check` exits 1 when the artifacts are readable but violate an invariant.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .controller import AssumptionError
from .dataset import consistency_gram
from .experiments import (
    ExperimentError,
    check_datasets,
    check_run,
    load_config,
    run_single,
    run_sweep,
    _offline_datasets,
)
from .lmi import robust_problem, stabilization_problem
from .solver import solve

__all__ = ["main"]


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddlmi",
        description="data-driven gain synthesis for uncertain linear systems",
    )
    parser.add_argument("--config", help="YAML config file (default: built-in benchmark)")
    parser.add_argument("--seed", type=int, help="override the offline data seed")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--parallel", type=int, default=1, help="worker processes for sweep")
    parser.add_argument("--margin", type=float, help="override the constraint margin coefficient")
    parser.add_argument("--tol", type=float, help="override the solver feasibility tolerance")
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="one-shot gain synthesis from vertex data")
    p_synth.add_argument(
        "--feasibility", action="store_true",
        help="stabilizability certificate only (no performance level)",
    )

    sub.add_parser("simulate", help="paired closed-loop run")

    sub.add_parser("sweep", help="constant-parameter grid comparison")

    p_export = sub.add_parser("export-sdpa", help="export one step's conic program")
    p_export.add_argument("--step", type=int, default=5, help="control step to export")

    p_check = sub.add_parser("check", help="validate artifacts")
    p_check.add_argument("target", help="dataset manifest (.json) or run directory")
    return parser


def _load(args):
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, offline_seed=int(args.seed))
    if args.margin is not None:
        config = replace(config, margin_coef=float(args.margin))
    if args.tol is not None:
        config = replace(config, feas_tol=float(args.tol))
    return config.validate()


def _fail(payload: dict, code: int = 2) -> int:
    print(json.dumps(payload, indent=2, sort_keys=True))
    return code


def _cmd_synth(args) -> int:
    config = _load(args)
    _, datasets = _offline_datasets(config, config.offline_seed)
    grams = [consistency_gram(ds) for ds in datasets]
    if args.feasibility:
        problem = stabilization_problem(grams, floor=config.floor)
    else:
        problem = robust_problem(
            grams, np.array(config.x0), config.cost_weights(), config.polytope(),
            config.margin_coef, config.floor,
        )
    outcome = solve(problem, config.tolerances())
    if not outcome.solved:
        return _fail({"error": "synthesis failed", "status": outcome.status,
                      "diagnostics": {k: str(v) for k, v in outcome.diagnostics.items()}})
    sol = outcome.solution
    payload = {
        "gain": sol.k.tolist(),
        "certificate": sol.p.tolist(),
        "status": outcome.status,
        "solver_status": sol.solver_status,
        "objective": sol.objective,
    }
    if sol.gamma is not None:
        payload["gamma"] = sol.gamma
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _cmd_simulate(args) -> int:
    config = _load(args)
    out = Path(args.out) if args.out else Path("run_out")
    record = run_single(config, out_dir=out)
    print(json.dumps({
        "out": str(out),
        "j_adaptive": record.j_adaptive,
        "j_robust": record.j_robust,
        "variation": record.variation,
        "out_of_hull": record.out_of_hull,
    }, indent=2, sort_keys=True))
    return 0


def _cmd_sweep(args) -> int:
    config = _load(args)
    out = Path(args.out) if args.out else Path("sweep_out")
    cells, summary = run_sweep(config, out_dir=out, parallel=max(1, args.parallel))
    failed = sum(1 for c in cells if c.status not in ("ok", "undefined_variation"))
    print(json.dumps({
        "out": str(out),
        "cells": len(cells),
        "failed_cells": failed,
        "medians": {repr(row["delta"]): row["median"] for row in summary},
    }, indent=2, sort_keys=True))
    return 0


def _cmd_export(args) -> int:
    config = _load(args)
    if args.step < 0 or args.step > config.horizon:
        return _fail({"error": f"step {args.step} outside horizon 0..{config.horizon}"})
    record = run_single(config, export_steps=(args.step,))
    out = Path(args.out) if args.out else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"step_{args.step}.dat-s"
    path.write_text(record.exports[args.step])
    print(json.dumps({"out": str(path), "step": args.step}, indent=2, sort_keys=True))
    return 0


def _cmd_check(args) -> int:
    target = Path(args.target)
    if target.is_dir():
        report = check_run(target)
    elif target.suffix == ".json":
        report = check_datasets(target)
    else:
        return _fail({"error": f"cannot check {target}: need a run directory or a manifest .json"})
    print(json.dumps(report, indent=2, sort_keys=True))
    return 1 if report["violations"] else 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handlers = {
        "synth": _cmd_synth,
        "simulate": _cmd_simulate,
        "sweep": _cmd_sweep,
        "export-sdpa": _cmd_export,
        "check": _cmd_check,
    }
    try:
        return handlers[args.command](args)
    except AssumptionError as exc:
        return _fail({"error": "offline data cannot certify a common gain", "detail": str(exc)})
    except ExperimentError as exc:
        return _fail({"error": "invalid experiment request", "detail": str(exc)})
    except FileNotFoundError as exc:
        return _fail({"error": "missing file", "detail": str(exc)})


if __name__ == "__main__":
    sys.exit(main())
