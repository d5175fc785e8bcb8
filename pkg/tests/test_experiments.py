"""Experiment runner: config plumbing, paired runs, reproducibility, sweep, checkers."""
import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from ddlmi import (
    ExperimentConfig,
    ExperimentError,
    check_datasets,
    check_run,
    default_config,
    load_config,
    run_single,
    run_sweep,
    save_config,
)
from oracles import riccati_fixed_point, benchmark_a, benchmark_b

CFG33 = replace(default_config(), offline_lengths=(3, 3))


def test_default_config_values():
    cfg = default_config()
    assert cfg.kappa == 7.87
    assert cfg.vertex_deltas == (0.1, 10.0)
    assert cfg.offline_lengths == (3, 2)
    assert cfg.schedule == ((0, 0.15), (15, 0.30))
    assert cfg.horizon == 50
    assert cfg.window == 5
    assert cfg.x0 == (0.95, 0.0)
    assert cfg.sweep_runs == 15
    assert cfg.sweep_deltas == tuple(round(0.1 * i, 1) for i in range(11))


def test_shipped_config_matches_defaults():
    shipped = load_config(Path(__file__).resolve().parents[1] / "configs" / "benchmark.yaml")
    assert shipped == default_config()


def test_load_config_none_is_default():
    assert load_config(None) == default_config()


def test_config_yaml_round_trip(tmp_path):
    cfg = replace(
        default_config(), horizon=33, offline_seed=4, schedule=((0, 0.2), (7, 0.9))
    )
    path = tmp_path / "c.yaml"
    save_config(cfg, path)
    assert load_config(path) == cfg


def test_config_rejects_unknown_section(tmp_path):
    with pytest.raises(ExperimentError, match="unknown"):
        ExperimentConfig.from_dict({"plants": {}})


def test_config_validation():
    with pytest.raises(ExperimentError):
        replace(default_config(), horizon=-1).validate()
    with pytest.raises(ExperimentError):
        replace(default_config(), window=0).validate()


def test_run_single_reproducible():
    cfg = replace(CFG33, horizon=15)
    first = run_single(cfg, seed=3)
    second = run_single(cfg, seed=3)
    assert first.j_adaptive == second.j_adaptive
    assert first.j_robust == second.j_robust
    for a, b in zip(first.trace_adaptive, second.trace_adaptive):
        # wall time is the one nondeterministic column
        assert a.k == b.k and a.x == b.x and a.u == b.u
        assert a.gamma == b.gamma and a.mode == b.mode and a.lyapunov == b.lyapunov


def test_run_single_pairing(tmp_path):
    cfg = replace(CFG33, horizon=20)
    rec = run_single(cfg, seed=0, out_dir=tmp_path, export_steps=(5,))
    assert len(rec.trace_adaptive) == 21
    assert len(rec.trace_robust) == 21
    assert rec.variation is not None
    assert rec.final_norm_adaptive < 1.0
    assert sum(rec.mode_hist_adaptive.values()) == 21
    names = sorted(p.name for p in Path(tmp_path).iterdir())
    assert names == [
        "metrics.json",
        "offline_manifest.json",
        "offline_v0.csv",
        "offline_v1.csv",
        "plot.script",
        "step_5.dat-s",
        "trace_adaptive.csv",
        "trace_robust.csv",
    ]
    metrics = json.loads((tmp_path / "metrics.json").read_text())
    assert metrics["j_adaptive"] == rec.j_adaptive
    assert "solve_time" not in json.dumps(metrics)


def test_run_outputs_pass_checkers(tmp_path):
    cfg = replace(CFG33, horizon=20)
    run_single(cfg, seed=0, out_dir=tmp_path, export_steps=(5,))
    run_report = check_run(tmp_path)
    assert run_report["violations"] == []
    assert run_report["max_abs_u"] <= 1.0 + 1e-8
    data_report = check_datasets(tmp_path / "offline_manifest.json")
    assert data_report["violations"] == []
    assert all(d["gram_psd_ok"] for d in data_report["datasets"])


def test_check_run_flags_tampered_trace(tmp_path):
    cfg = replace(CFG33, horizon=12)
    run_single(cfg, seed=0, out_dir=tmp_path)
    path = tmp_path / "trace_adaptive.csv"
    rows = path.read_text().splitlines()
    cols = rows[1].split(",")
    cols[3] = "25.0"  # u1 far beyond the input polytope
    rows[1] = ",".join(cols)
    path.write_text("\n".join(rows) + "\n")
    report = check_run(tmp_path)
    assert report["violations"]


def test_zero_horizon_cost_is_single_stage():
    rec = run_single(replace(CFG33, horizon=0), seed=0)
    (row,) = rec.trace_adaptive
    x = np.array(row.x)
    u = np.array(row.u)
    expected = float(x @ x + 0.01 * u @ u)
    assert rec.j_adaptive == pytest.approx(expected, rel=1e-12)


def test_zero_start_has_undefined_variation():
    rec = run_single(replace(CFG33, x0=(0.0, 0.0), horizon=8), seed=0)
    assert rec.j_adaptive == 0.0
    assert rec.j_robust == 0.0
    assert rec.variation is None


def test_early_export_rejected(tmp_path):
    with pytest.raises(ExperimentError, match="window not full"):
        run_single(replace(CFG33, horizon=10), seed=0, out_dir=tmp_path, export_steps=(2,))


def test_setup_infeasible_seed_aborts():
    # seed 0 with a two-sample second experiment fails the offline certificate
    with pytest.raises(Exception) as err:
        run_single(replace(default_config(), horizon=10), seed=0)
    assert "stabilizing" in str(err.value)


def test_value_recovery_on_collapsed_hull():
    # both vertices at the plant's friction value: once the window identifies
    # the system, each adopted certificate matches the Riccati cost-to-go
    p_lqr, _ = riccati_fixed_point(benchmark_a(0.15), benchmark_b(), np.eye(2), [[0.01]])
    cfg = replace(
        default_config(), vertex_deltas=(0.15, 0.15), offline_lengths=(3, 3),
        schedule=((0, 0.15),), horizon=60,
    )
    rec = run_single(cfg, seed=0, keep_decisions=True)
    checked = 0
    for k, dec in enumerate(rec.decisions_adaptive):
        if dec.mode == "solved_fresh" and k >= 5:
            x = np.array(rec.trace_adaptive[k].x)
            v_lqr = float(x @ p_lqr @ x)
            assert dec.gamma == pytest.approx(v_lqr, rel=1e-2)
            checked += 1
    assert checked >= 1


def test_sweep_structure(tmp_path):
    cfg = replace(
        CFG33, sweep_deltas=(0.1, 0.2), sweep_runs=2, horizon=15
    )
    cells, summary = run_sweep(cfg, out_dir=tmp_path)
    assert [(c.delta, c.rep) for c in cells] == [(0.1, 0), (0.1, 1), (0.2, 0), (0.2, 1)]
    assert all(c.status == "ok" for c in cells)
    assert [row["delta"] for row in summary] == [0.1, 0.2]
    for row in summary:
        assert row["min"] <= row["q1"] <= row["median"] <= row["q3"] <= row["max"]
    names = sorted(p.name for p in Path(tmp_path).iterdir())
    assert names == ["plot.script", "sweep_cells.csv", "sweep_summary.csv"]


def test_sweep_parallel_matches_serial(tmp_path):
    cfg = replace(CFG33, sweep_deltas=(0.1, 0.3), sweep_runs=2, horizon=12)
    serial_cells, serial_summary = run_sweep(cfg, out_dir=tmp_path / "s")
    parallel_cells, parallel_summary = run_sweep(cfg, out_dir=tmp_path / "p", parallel=2)
    assert serial_cells == parallel_cells
    assert serial_summary == parallel_summary
    assert (tmp_path / "s" / "sweep_cells.csv").read_bytes() == (
        tmp_path / "p" / "sweep_cells.csv"
    ).read_bytes()
