"""Reproducible closed-loop experiments: paired runs, parameter sweeps, checks.

A single config drives everything.  run_single plays the adaptive controller
and the vertex-only baseline against identical plants and offline data, so
their costs are directly comparable; run_sweep repeats that comparison over
a parameter grid with randomized initial states.  All randomness flows from
seeds in the config, and all emitted files are deterministic except for the
wall-clock solve_time column in the trace CSVs.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .controller import (
    AssumptionError,
    ControllerState,
    adaptive_step,
    make_controller,
    record_transition,
    robust_step,
)
from .dataset import consistency_gram, write_dataset_csv, write_manifest
from .lmi import (
    ConstraintPolytope,
    CostWeights,
    adaptive_problem,
)
from .plant import (
    BenchmarkPlant,
    DeltaSchedule,
    benchmark_vertices,
    generate_offline_data,
    true_cost,
)
from .sdpa import export_sdpa
from .solver import SolverTolerances

__all__ = [
    "ExperimentError",
    "ExperimentConfig",
    "RunRecord",
    "SweepCell",
    "default_config",
    "load_config",
    "save_config",
    "run_single",
    "run_sweep",
    "check_datasets",
    "check_run",
]


class ExperimentError(RuntimeError):
    """Raised on invalid configs or impossible experiment requests."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one benchmark comparison.

    The defaults are the nominal servo benchmark: two vertex experiments of
    lengths 3 and 2, a 5-sample online window, horizon 50, and a friction
    parameter that jumps from 0.15 to 0.30 at step 15.
    """

    kappa: float = 7.87
    vertex_deltas: tuple = (0.1, 10.0)
    offline_lengths: tuple = (3, 2)
    offline_x0: tuple = (0.95, 0.0)
    offline_input_range: tuple = (-1.0, 1.0)
    offline_seed: int = 0
    schedule: tuple = ((0, 0.15), (15, 0.30))
    horizon: int = 50
    window: int = 5
    q: tuple = ((1.0, 0.0), (0.0, 1.0))
    r: tuple = ((0.01,),)
    w_u: tuple = ((1.0,), (-1.0,))
    w_x: tuple = ()
    x0: tuple = (0.95, 0.0)
    feas_tol: float = 1e-6
    gap_tol: float = 1e-8
    max_iter: int = 200
    margin_coef: float = 1e-7
    floor: float = 1e-6
    residual_gate: float = 1e-6
    sweep_deltas: tuple = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    sweep_runs: int = 15
    sweep_seed: int = 1

    def validate(self) -> "ExperimentConfig":
        if self.horizon < 0:
            raise ExperimentError("horizon must be >= 0")
        if self.window < 1:
            raise ExperimentError("window length must be >= 1")
        if len(self.offline_lengths) != len(self.vertex_deltas):
            raise ExperimentError("need one offline experiment length per vertex")
        if any(t < 1 for t in self.offline_lengths):
            raise ExperimentError("offline experiment lengths must be >= 1")
        if self.sweep_runs < 1:
            raise ExperimentError("sweep needs at least one run per grid point")
        DeltaSchedule(self.schedule)  # raises on bad breakpoints
        return self

    # -- structured (de)serialization ------------------------------------

    def to_dict(self) -> dict:
        return {
            "plant": {
                "kappa": self.kappa,
                "vertex_deltas": list(self.vertex_deltas),
                "schedule": [list(bp) for bp in self.schedule],
            },
            "offline": {
                "lengths": list(self.offline_lengths),
                "x0": list(self.offline_x0),
                "input_range": list(self.offline_input_range),
                "seed": self.offline_seed,
            },
            "run": {
                "horizon": self.horizon,
                "window": self.window,
                "x0": list(self.x0),
            },
            "weights": {
                "q": [list(r) for r in self.q],
                "r": [list(r) for r in self.r],
            },
            "constraints": {
                "w_u": [list(r) for r in self.w_u],
                "w_x": [list(r) for r in self.w_x],
            },
            "solver": {
                "feas_tol": self.feas_tol,
                "gap_tol": self.gap_tol,
                "max_iter": self.max_iter,
                "margin_coef": self.margin_coef,
                "floor": self.floor,
                "residual_gate": self.residual_gate,
            },
            "sweep": {
                "deltas": list(self.sweep_deltas),
                "runs": self.sweep_runs,
                "seed": self.sweep_seed,
            },
        }

    @staticmethod
    def from_dict(payload: dict) -> "ExperimentConfig":
        def tupled(rows):
            return tuple(tuple(r) for r in rows)

        known = {"plant", "offline", "run", "weights", "constraints", "solver", "sweep"}
        unknown = set(payload) - known
        if unknown:
            raise ExperimentError(f"unknown config sections: {sorted(unknown)}")
        base = ExperimentConfig()
        plant = payload.get("plant", {})
        offline = payload.get("offline", {})
        run = payload.get("run", {})
        weights = payload.get("weights", {})
        constraints = payload.get("constraints", {})
        solver = payload.get("solver", {})
        sweep = payload.get("sweep", {})
        cfg = replace(
            base,
            kappa=float(plant.get("kappa", base.kappa)),
            vertex_deltas=tuple(plant.get("vertex_deltas", base.vertex_deltas)),
            schedule=tupled(plant.get("schedule", base.schedule)),
            offline_lengths=tuple(int(t) for t in offline.get("lengths", base.offline_lengths)),
            offline_x0=tuple(offline.get("x0", base.offline_x0)),
            offline_input_range=tuple(offline.get("input_range", base.offline_input_range)),
            offline_seed=int(offline.get("seed", base.offline_seed)),
            horizon=int(run.get("horizon", base.horizon)),
            window=int(run.get("window", base.window)),
            x0=tuple(run.get("x0", base.x0)),
            q=tupled(weights.get("q", base.q)),
            r=tupled(weights.get("r", base.r)),
            w_u=tupled(constraints.get("w_u", base.w_u)),
            w_x=tupled(constraints.get("w_x", base.w_x)),
            feas_tol=float(solver.get("feas_tol", base.feas_tol)),
            gap_tol=float(solver.get("gap_tol", base.gap_tol)),
            max_iter=int(solver.get("max_iter", base.max_iter)),
            margin_coef=float(solver.get("margin_coef", base.margin_coef)),
            floor=float(solver.get("floor", base.floor)),
            residual_gate=float(solver.get("residual_gate", base.residual_gate)),
            sweep_deltas=tuple(sweep.get("deltas", base.sweep_deltas)),
            sweep_runs=int(sweep.get("runs", base.sweep_runs)),
            sweep_seed=int(sweep.get("seed", base.sweep_seed)),
        )
        return cfg.validate()

    # -- derived objects ---------------------------------------------------

    def cost_weights(self) -> CostWeights:
        return CostWeights.from_qr(np.array(self.q), np.array(self.r))

    def polytope(self) -> ConstraintPolytope:
        n = len(self.q)
        m = len(self.r)
        return ConstraintPolytope.from_rows(np.array(self.w_x), np.array(self.w_u), n, m)

    def tolerances(self) -> SolverTolerances:
        return SolverTolerances(
            feas_tol=self.feas_tol, gap_tol=self.gap_tol, max_iter=self.max_iter
        )

    def out_of_hull(self) -> bool:
        lo, hi = min(self.vertex_deltas), max(self.vertex_deltas)
        return any(v < lo - 1e-12 or v > hi + 1e-12 for _, v in self.schedule)


def default_config() -> ExperimentConfig:
    return ExperimentConfig().validate()


def load_config(path=None) -> ExperimentConfig:
    """Load a YAML config; None returns the built-in nominal benchmark config."""
    if path is None:
        return default_config()
    payload = yaml.safe_load(Path(path).read_text())
    if not isinstance(payload, dict):
        raise ExperimentError(f"config {path} is not a mapping")
    return ExperimentConfig.from_dict(payload)


def save_config(config: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(config.to_dict(), sort_keys=False))


# ---------------------------------------------------------------------------
# single paired run
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunRecord:
    """Everything measured in one paired adaptive-vs-baseline run."""

    seed: int
    j_adaptive: float
    j_robust: float
    variation: float | None
    trace_adaptive: tuple
    trace_robust: tuple
    mode_hist_adaptive: dict
    mode_hist_robust: dict
    final_norm_adaptive: float
    final_norm_robust: float
    out_of_hull: bool
    decisions_adaptive: tuple = ()
    decisions_robust: tuple = ()
    exports: dict = field(default_factory=dict)


def _offline_datasets(config: ExperimentConfig, seed: int):
    vertices = benchmark_vertices(config.kappa, config.vertex_deltas)
    rng = np.random.default_rng(seed)
    datasets = []
    for i, (vertex, t) in enumerate(zip(vertices, config.offline_lengths)):
        datasets.append(
            generate_offline_data(
                vertex, t, config.offline_x0, config.offline_input_range, rng,
                label=f"v{i}",
            )
        )
    return vertices, datasets


def _mode_histogram(trace) -> dict:
    hist = {"solved_fresh": 0, "resolved_previous_window": 0, "reused_gain": 0, "robust_warmup": 0}
    for rec in trace:
        hist[rec.mode] += 1
    return hist


def _closed_loop(config, state: ControllerState, step_fn, export_steps=(), keep_decisions=False):
    plant = BenchmarkPlant(config.kappa, DeltaSchedule(config.schedule), config.x0)
    x = np.asarray(config.x0, dtype=float).ravel()
    trajectory = []
    decisions = []
    exports = {}
    for k in range(config.horizon + 1):
        if k in export_steps:
            if not state.window.full:
                raise ExperimentError(
                    f"cannot export the step-{k} problem: window not full until step {config.window}"
                )
            problem = adaptive_problem(
                list(state.grams),
                consistency_gram(state.window.as_dataset()),
                x, state.weights, state.polytope, state.margin_coef, state.floor,
            )
            exports[k] = export_sdpa(problem)
        decision, state = step_fn(state, x)
        trajectory.append((x.copy(), decision.u.copy()))
        if keep_decisions:
            decisions.append(decision)
        x_next = plant.step(decision.u)
        state = record_transition(state, x, decision.u, x_next)
        x = x_next
    return state, trajectory, tuple(decisions), exports


def run_single(
    config: ExperimentConfig,
    seed: int | None = None,
    out_dir=None,
    export_steps=(),
    keep_decisions: bool = False,
) -> RunRecord:
    """Run the adaptive and baseline controllers against identical plants.

    Both controllers consume the same offline datasets (seeded by `seed`,
    default the config's offline seed) and face the same parameter schedule.

    Raises:
        AssumptionError: the offline data cannot certify any common gain, so
            neither controller can start.
    """
    config.validate()
    seed = config.offline_seed if seed is None else int(seed)
    _, datasets = _offline_datasets(config, seed)
    weights = config.cost_weights()
    poly = config.polytope()
    tol = config.tolerances()

    adaptive_state = make_controller(
        datasets, config.window, weights, poly, tolerances=tol,
        margin_coef=config.margin_coef, floor=config.floor,
        residual_gate=config.residual_gate,
    )
    robust_state = make_controller(
        datasets, config.window, weights, poly, tolerances=tol,
        margin_coef=config.margin_coef, floor=config.floor,
        residual_gate=config.residual_gate, check_stabilizable=False,
    )

    adaptive_state, traj_a, dec_a, exports = _closed_loop(
        config, adaptive_state, adaptive_step, tuple(export_steps), keep_decisions
    )
    robust_state, traj_r, dec_r, _ = _closed_loop(
        config, robust_state, robust_step, (), keep_decisions
    )

    j_a = true_cost(traj_a, weights, config.horizon)
    j_r = true_cost(traj_r, weights, config.horizon)
    variation = (j_r - j_a) / j_r if j_r > 0 else None
    record = RunRecord(
        seed=seed,
        j_adaptive=j_a,
        j_robust=j_r,
        variation=variation,
        trace_adaptive=adaptive_state.trace,
        trace_robust=robust_state.trace,
        mode_hist_adaptive=_mode_histogram(adaptive_state.trace),
        mode_hist_robust=_mode_histogram(robust_state.trace),
        final_norm_adaptive=float(np.linalg.norm(traj_a[-1][0])),
        final_norm_robust=float(np.linalg.norm(traj_r[-1][0])),
        out_of_hull=config.out_of_hull(),
        decisions_adaptive=dec_a,
        decisions_robust=dec_r,
        exports=exports,
    )
    if out_dir is not None:
        _write_run_outputs(config, record, datasets, Path(out_dir))
    return record


def _write_trace_csv(trace, n: int, m: int, path: Path) -> None:
    cols = (
        ["k"] + [f"x{i+1}" for i in range(n)] + [f"u{i+1}" for i in range(m)]
        + ["gamma", "mode", "lyapunov", "iterations", "solve_time"]
    )
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for rec in trace:
            row = [rec.k]
            row += [repr(v) for v in rec.x]
            row += [repr(v) for v in rec.u]
            row += [repr(rec.gamma), rec.mode, repr(rec.lyapunov), rec.iterations,
                    repr(rec.solve_time)]
            writer.writerow(row)


_PLOT_SCRIPT = """# gnuplot script: states and input, adaptive vs baseline
# usage: gnuplot plot.script
set datafile separator ","
set key autotitle columnhead
set terminal pngcairo size 900,900
set output "trajectories.png"
set multiplot layout 3,1
set ylabel "x1"
plot "trace_robust.csv" using 1:2 with lines title "baseline", \\
     "trace_adaptive.csv" using 1:2 with lines title "adaptive"
set ylabel "x2"
plot "trace_robust.csv" using 1:3 with lines title "baseline", \\
     "trace_adaptive.csv" using 1:3 with lines title "adaptive"
set ylabel "u"
set xlabel "step"
plot "trace_robust.csv" using 1:4 with lines title "baseline", \\
     "trace_adaptive.csv" using 1:4 with lines title "adaptive"
unset multiplot
"""


def _write_run_outputs(config, record: RunRecord, datasets, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    n, m = len(config.q), len(config.r)
    _write_trace_csv(record.trace_adaptive, n, m, out_dir / "trace_adaptive.csv")
    _write_trace_csv(record.trace_robust, n, m, out_dir / "trace_robust.csv")
    files = []
    for i, ds in enumerate(datasets):
        name = f"offline_v{i}.csv"
        write_dataset_csv(ds, out_dir / name)
        files.append(name)
    write_manifest(out_dir / "offline_manifest.json", n, m, files)
    metrics = {
        "seed": record.seed,
        "horizon": config.horizon,
        "window": config.window,
        "j_adaptive": record.j_adaptive,
        "j_robust": record.j_robust,
        "variation": record.variation,
        "mode_histogram_adaptive": record.mode_hist_adaptive,
        "mode_histogram_robust": record.mode_hist_robust,
        "final_norm_adaptive": record.final_norm_adaptive,
        "final_norm_robust": record.final_norm_robust,
        "out_of_hull": record.out_of_hull,
    }
    (out_dir / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    (out_dir / "plot.script").write_text(_PLOT_SCRIPT)
    for k, text in record.exports.items():
        (out_dir / f"step_{k}.dat-s").write_text(text)


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepCell:
    delta: float
    rep: int
    x0: tuple
    status: str  # "ok" | "setup_infeasible" | "undefined_variation" | "error"
    j_adaptive: float | None = None
    j_robust: float | None = None
    variation: float | None = None
    error: str = ""


def _run_cell(args) -> SweepCell:
    config, di, delta, rep = args
    rng = np.random.default_rng([config.sweep_seed, di, rep])
    x0 = rng.uniform(-1.0, 1.0, size=len(config.x0))
    cfg = replace(config, schedule=((0, float(delta)),), x0=tuple(float(v) for v in x0))
    rec, last_error = None, ""
    # random offline experiments may not certify a common gain; redraw
    # deterministically, the way the benchmark conditions on informative data
    for _ in range(40):
        cell_seed = int(rng.integers(2**31 - 1))
        try:
            rec = run_single(cfg, seed=cell_seed)
            break
        except AssumptionError as exc:
            last_error = str(exc)
        except Exception as exc:  # sweep keeps going; the cell records its failure
            return SweepCell(float(delta), rep, tuple(x0), "error", error=str(exc))
    if rec is None:
        return SweepCell(float(delta), rep, tuple(x0), "setup_infeasible", error=last_error)
    status = "ok" if rec.variation is not None else "undefined_variation"
    return SweepCell(
        float(delta), rep, tuple(x0), status,
        rec.j_adaptive, rec.j_robust, rec.variation,
    )


def run_sweep(config: ExperimentConfig, out_dir=None, parallel: int = 1):
    """Constant-parameter grid with randomized initial states.

    Returns (cells, summary) where summary has one row per grid value with
    quartiles of the cost variation over the cells that produced one.
    """
    config.validate()
    jobs = [
        (config, di, delta, rep)
        for di, delta in enumerate(config.sweep_deltas)
        for rep in range(config.sweep_runs)
    ]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            cells = list(pool.map(_run_cell, jobs))
    else:
        cells = [_run_cell(job) for job in jobs]

    summary = []
    for di, delta in enumerate(config.sweep_deltas):
        variations = [
            c.variation for c in cells
            if c.delta == float(delta) and c.status == "ok"
        ]
        row = {"delta": float(delta), "runs": config.sweep_runs, "valid": len(variations)}
        if variations:
            arr = np.array(variations)
            row.update(
                min=float(arr.min()),
                q1=float(np.percentile(arr, 25)),
                median=float(np.percentile(arr, 50)),
                q3=float(np.percentile(arr, 75)),
                max=float(arr.max()),
            )
        else:
            row.update(min=None, q1=None, median=None, q3=None, max=None)
        summary.append(row)

    if out_dir is not None:
        _write_sweep_outputs(cells, summary, Path(out_dir))
    return cells, summary


_SWEEP_PLOT_SCRIPT = """# gnuplot script: cost variation quartiles per grid value
# usage: gnuplot plot.script
set datafile separator ","
set key autotitle columnhead
set terminal pngcairo size 900,500
set output "sweep.png"
set xlabel "delta"
set ylabel "(J_baseline - J_adaptive) / J_baseline"
plot "sweep_summary.csv" using 1:6 with linespoints title "median", \\
     "sweep_summary.csv" using 1:5:7 with filledcurves fc rgb "#d0d0ff" title "quartiles"
"""


def _write_sweep_outputs(cells, summary, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "sweep_cells.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["delta", "rep", "x0_1", "x0_2", "status", "j_adaptive", "j_robust", "variation"])
        for c in cells:
            writer.writerow([
                repr(c.delta), c.rep,
                *[repr(v) for v in c.x0], c.status,
                "" if c.j_adaptive is None else repr(c.j_adaptive),
                "" if c.j_robust is None else repr(c.j_robust),
                "" if c.variation is None else repr(c.variation),
            ])
    with (out_dir / "sweep_summary.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["delta", "runs", "valid", "min", "q1", "median", "q3", "max"])
        for row in summary:
            writer.writerow([
                repr(row["delta"]), row["runs"], row["valid"],
                *["" if row[k] is None else repr(row[k]) for k in ("min", "q1", "median", "q3", "max")],
            ])
    (out_dir / "plot.script").write_text(_SWEEP_PLOT_SCRIPT)


# ---------------------------------------------------------------------------
# invariant checks over emitted artifacts
# ---------------------------------------------------------------------------


def check_datasets(manifest_path) -> dict:
    """Gramian and informativity invariants for every dataset in a manifest."""
    from .dataset import consistency_residual, informativity_for_identification, read_manifest
    from .dataset import SystemPair

    datasets = read_manifest(manifest_path)
    rng = np.random.default_rng(0)
    reports, violations = [], []
    for ds in datasets:
        gram = consistency_gram(ds)
        lam_max = float(np.max(np.linalg.eigvalsh(gram.matrix)))
        bound = 1e-10 * max(1.0, float(np.linalg.norm(gram.matrix)))
        psd_ok = lam_max <= bound
        identity_ok = True
        for _ in range(20):
            a = rng.normal(size=(ds.n, ds.n))
            b = rng.normal(size=(ds.n, ds.m))
            res = consistency_residual(ds, SystemPair(a, b))
            iab = np.hstack([np.eye(ds.n), a, b])
            quad = -float(np.trace(iab @ gram.matrix @ iab.T))
            if abs(res**2 - quad) > 1e-9 * max(1.0, res**2):
                identity_ok = False
        verdict = informativity_for_identification(ds)
        reports.append({
            "label": ds.label,
            "samples": ds.samples,
            "gram_psd_ok": psd_ok,
            "residual_identity_ok": identity_ok,
            "identifiable": verdict.identifiable,
            "regressor_rank": verdict.rank,
        })
        if not psd_ok:
            violations.append(f"{ds.label}: Gramian not negative semidefinite (max eig {lam_max:.3e})")
        if not identity_ok:
            violations.append(f"{ds.label}: residual/Gramian identity failed")
    return {"datasets": reports, "violations": violations}


def check_run(run_dir) -> dict:
    """Post-hoc trace invariants: input bounds, certificate levels, trace shape."""
    run_dir = Path(run_dir)
    metrics = json.loads((run_dir / "metrics.json").read_text())
    violations = []
    lengths = {}
    max_abs_u = 0.0
    for name in ("trace_adaptive.csv", "trace_robust.csv"):
        with (run_dir / name).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        lengths[name] = len(rows)
        u_cols = [c for c in rows[0] if c.startswith("u")]
        for row in rows:
            for c in u_cols:
                max_abs_u = max(max_abs_u, abs(float(row[c])))
            if row["mode"] == "solved_fresh":
                v, g = float(row["lyapunov"]), float(row["gamma"])
                if v > g * (1.0 + 1e-6) + 1e-12:
                    violations.append(
                        f"{name} step {row['k']}: certificate value {v} exceeds level {g}"
                    )
    if max_abs_u > 1.0 + 1e-8:
        violations.append(f"input bound exceeded: max |u| = {max_abs_u}")
    expected = metrics["horizon"] + 1
    for name, got in lengths.items():
        if got != expected:
            violations.append(f"{name}: {got} rows, expected {expected}")
    return {
        "max_abs_u": max_abs_u,
        "trace_lengths": lengths,
        "violations": violations,
    }
