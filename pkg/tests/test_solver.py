"""Conic solve wrapper: verified certificates, determinism, failure verdicts."""
import numpy as np
import pytest

from ddlmi import (
    ConstraintPolytope,
    CostWeights,
    adaptive_problem,
    build_dataset,
    consistency_gram,
    evaluate_block,
    robust_problem,
    stabilization_problem,
)
from ddlmi.lmi import LMIBlock, assemble, make_layout
from ddlmi.solver import SolverTolerances, solve


@pytest.fixture(scope="module")
def bench_problem(datasets_33):
    grams = [consistency_gram(d) for d in datasets_33]
    weights = CostWeights.from_qr(np.eye(2), [[0.01]])
    poly = ConstraintPolytope(np.zeros((0, 2)), np.array([[1.0], [-1.0]]))
    return adaptive_problem(grams, grams[0], np.array([0.95, 0.0]), weights, poly)


def test_unstabilizable_data_reported_infeasible():
    # identified system is x+ = 2x with b = 0: nothing can stabilize it
    data = build_dataset([([1.0], [0.5], [2.0]), ([2.0], [-0.3], [4.0])])
    out = solve(stabilization_problem([consistency_gram(data)]))
    assert out.status == "infeasible"
    assert out.solution is None
    assert not out.solved


def test_contradictory_blocks_reported_infeasible():
    layout = make_layout(1, 1, 1, 0, False)
    blocks = [
        LMIBlock("pos", "floor", np.array([[-1.0]]), ((0, np.array([[1.0]])),), 0.0, None),
        LMIBlock("neg", "floor", np.array([[-1.0]]), ((0, np.array([[-1.0]])),), 0.0, None),
    ]
    out = solve(assemble(blocks, layout, "multiplier_sum"))
    assert out.status == "infeasible"


def test_solve_is_deterministic(bench_problem):
    first = solve(bench_problem)
    second = solve(bench_problem)
    assert first.status == second.status == "solved"
    assert first.solution.h.tobytes() == second.solution.h.tobytes()
    assert first.solution.l.tobytes() == second.solution.l.tobytes()
    assert first.solution.gamma == second.solution.gamma
    np.testing.assert_array_equal(first.solution.eps_stab, second.solution.eps_stab)


def test_certificate_satisfies_every_block(bench_problem):
    # acceptance rule: min eigenvalue >= -feas_tol * max(1, ||evaluated block||)
    tol = SolverTolerances(feas_tol=1e-6)
    out = solve(bench_problem, tol)
    assert out.solved
    layout = bench_problem.layout
    x = np.zeros(layout.nvar)
    for idx, (i, j) in enumerate(layout.h_pairs):
        x[idx] = out.solution.h[i, j]
    for a in range(layout.m):
        for b in range(layout.n):
            x[layout.l_index(a, b)] = out.solution.l[a, b]
    x[layout.gamma_index] = out.solution.gamma
    for pos, val in zip(layout.eps_stab, out.solution.eps_stab):
        x[pos] = val
    for pos, val in zip(layout.eps_perf, out.solution.eps_perf):
        x[pos] = val
    for blk in bench_problem.blocks:
        w = evaluate_block(blk, x)
        lam = float(np.min(np.linalg.eigvalsh(w)))
        assert lam >= -tol.feas_tol * max(1.0, float(np.linalg.norm(w))), blk.name


def test_solution_identities(bench_problem):
    sol = solve(bench_problem).solution
    np.testing.assert_allclose(sol.k @ sol.h, sol.l, atol=1e-10)
    np.testing.assert_allclose(sol.p @ sol.h, sol.gamma * np.eye(2), atol=1e-10)
    # the certificate matrix must be symmetric positive definite
    assert float(np.min(np.linalg.eigvalsh(sol.p))) > 0.0


def test_diagnostics_shape(bench_problem):
    out = solve(bench_problem)
    for key in ("iterations", "raw_status", "repaired", "solve_time", "verification"):
        assert key in out.diagnostics
    assert out.diagnostics["iterations"] >= 1
    assert out.solution.metadata["raw_status"] == out.diagnostics["raw_status"]


def test_tolerance_defaults():
    tol = SolverTolerances()
    assert tol.feas_tol == 1e-8
    assert tol.gap_tol == 1e-8
    assert tol.max_iter == 200
