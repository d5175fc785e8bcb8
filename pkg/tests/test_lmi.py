"""LMI block construction, assembly, and gain recovery."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddlmi import (
    AssemblyError,
    ConstraintPolytope,
    CostWeights,
    GainRecoveryError,
    adaptive_problem,
    build_dataset,
    consistency_gram,
    dataset_from_matrices,
    evaluate_block,
    make_layout,
    recover_gain,
    robust_problem,
    stabilization_problem,
)
from ddlmi.lmi import constraint_blocks
from ddlmi.solver import solve
from conftest import make_vertex_datasets
from oracles import riccati_fixed_point, scalar_finsler_feasible


def _scalar_dataset(seed=3, t=3, a=0.5, b=1.0):
    rng = np.random.default_rng(seed)
    xs = [1.0]
    us = []
    for _ in range(t):
        u = float(rng.uniform(-1, 1))
        us.append(u)
        xs.append(a * xs[-1] + b * u)
    return build_dataset([([xs[i]], [us[i]], [xs[i + 1]]) for i in range(t)])


def test_cost_weight_factors():
    w = CostWeights.from_qr([[2.0, 1.0], [1.0, 2.0]], [[0.5]])
    np.testing.assert_allclose(w.q_factor.T @ w.q_factor, w.q, atol=1e-12)
    np.testing.assert_allclose(w.r_factor.T @ w.r_factor, w.r, atol=1e-12)


def test_cost_weight_validation():
    with pytest.raises(AssemblyError):
        CostWeights.from_qr([[-1.0]], [[1.0]])
    # R must be strictly positive definite
    with pytest.raises(AssemblyError):
        CostWeights.from_qr([[1.0]], [[0.0]])


def test_layout_benchmark_variable_count():
    layout = make_layout(2, 1, n_stab=2, n_perf=1, with_gamma=True)
    assert layout.nvar == 9
    assert layout.names[:3] == ("H[0,0]", "H[0,1]", "H[1,1]")
    assert layout.gamma_index == 5
    assert layout.eps_stab == (6, 7)
    assert layout.eps_perf == (8,)
    assert layout.l_index(0, 1) == 4


def test_layout_unpack_round_trip():
    layout = make_layout(2, 1, 2, 1, True)
    vec = np.arange(1.0, 10.0)
    h, l_mat, gamma, es, ep = layout.unpack(vec)
    np.testing.assert_array_equal(h, [[1.0, 2.0], [2.0, 3.0]])
    np.testing.assert_array_equal(l_mat, [[4.0, 5.0]])
    assert gamma == 6.0
    np.testing.assert_array_equal(es, [7.0, 8.0])
    np.testing.assert_array_equal(ep, [9.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_every_block_evaluates_symmetric(seed):
    rng = np.random.default_rng(seed)
    sets = make_vertex_datasets(int(rng.integers(0, 100)), (3, 3))
    grams = [consistency_gram(d) for d in sets]
    weights = CostWeights.from_qr(np.eye(2), [[0.01]])
    poly = ConstraintPolytope(np.zeros((0, 2)), np.array([[1.0], [-1.0]]))
    prob = adaptive_problem(grams, grams[0], rng.uniform(-1, 1, 2), weights, poly)
    x = rng.uniform(-2, 2, prob.nvar)
    for blk in prob.blocks:
        val = evaluate_block(blk, x)
        np.testing.assert_allclose(val, val.T, atol=1e-12)


def test_scalar_stabilization_stable_and_inside_hand_lmi():
    data = _scalar_dataset()
    gram = consistency_gram(data)
    out = solve(stabilization_problem([gram]))
    assert out.solved
    sol = out.solution
    k = float(sol.k[0, 0])
    # closed loop for the true system behind the data
    assert abs(0.5 + k) < 1.0
    # the solver's point satisfies the independently hand-built 4x4 block
    h, l_val, eps = float(sol.h[0, 0]), float(sol.l[0, 0]), sol.eps_stab[0]
    assert scalar_finsler_feasible(h, l_val, eps, gram.matrix, tol=1e-7 * max(1.0, h))


def test_scalar_lqr_recovery():
    # exact identifiable data collapses the consistency class to one system,
    # so the certificate minimization lands on the Riccati solution
    p_ref, k_ref = riccati_fixed_point(0.5, 1.0, 1.0, 1.0)
    data = _scalar_dataset()
    gram = consistency_gram(data)
    weights = CostWeights.from_qr([[1.0]], [[1.0]])
    poly = ConstraintPolytope(np.zeros((0, 1)), np.array([[0.05]]))
    out = solve(robust_problem([gram], np.array([1.0]), weights, poly))
    assert out.solved
    gamma = out.solution.gamma
    assert gamma == pytest.approx(float(p_ref[0, 0]), rel=0.01)
    assert float(out.solution.k[0, 0]) == pytest.approx(float(k_ref[0, 0]), abs=1e-3)


def test_constraint_block_count_and_shape():
    layout = make_layout(2, 1, 2, 1, True)
    poly = ConstraintPolytope(
        np.array([[0.5, 0.0], [0.0, 0.5]]), np.array([[1.0], [-1.0]])
    )
    blocks = constraint_blocks(np.array([0.9, 0.1]), poly, layout)
    # one membership block plus one per state row plus one per input row
    assert len(blocks) == 1 + 2 + 2
    for blk in blocks:
        assert blk.const.shape == (3, 3)


def test_membership_block_value():
    layout = make_layout(2, 1, 0, 0, True)
    poly = ConstraintPolytope(np.zeros((0, 2)), np.zeros((0, 1)))
    (blk,) = constraint_blocks(np.array([1.0, 2.0]), poly, layout, margin_coef=0.0)
    vec = np.zeros(layout.nvar)
    vec[layout.h_index(0, 0)] = 5.0
    vec[layout.h_index(1, 1)] = 7.0
    val = evaluate_block(blk, vec)
    np.testing.assert_allclose(val, [[1.0, 1.0, 2.0], [1.0, 5.0, 0.0], [2.0, 0.0, 7.0]])


def test_stabilization_problem_normalizes_h():
    sets = make_vertex_datasets(7, (3, 2))
    out = solve(stabilization_problem([consistency_gram(d) for d in sets]))
    assert out.solved
    # the feasibility variant pins the free scaling with H >= I
    assert float(np.min(np.linalg.eigvalsh(out.solution.h))) >= 1.0 - 1e-6


def test_adaptive_problem_counts(datasets_33):
    grams = [consistency_gram(d) for d in datasets_33]
    weights = CostWeights.from_qr(np.eye(2), [[0.01]])
    poly = ConstraintPolytope(np.zeros((0, 2)), np.array([[1.0], [-1.0]]))
    prob = adaptive_problem(grams, grams[0], np.array([0.95, 0.0]), weights, poly)
    assert prob.nvar == 9
    assert prob.objective_name == "gamma"
    # 2 vertex blocks + 1 window performance + 1 Schur companion
    # + membership + 2 input rows + 4 scalar floors
    assert len(prob.blocks) == 11
    sizes = sorted(blk.const.shape[0] for blk in prob.blocks)
    assert sizes == [1, 1, 1, 1, 3, 3, 3, 5, 7, 7, 10]


def test_robust_problem_omits_window(datasets_33):
    grams = [consistency_gram(d) for d in datasets_33]
    weights = CostWeights.from_qr(np.eye(2), [[0.01]])
    poly = ConstraintPolytope(np.zeros((0, 2)), np.array([[1.0], [-1.0]]))
    prob = robust_problem(grams, np.array([0.95, 0.0]), weights, poly)
    # one cost pair per vertex (sharing gamma) instead of a single window pair
    assert prob.nvar == 10
    assert len(prob.blocks) == 14


def test_recover_gain_identities():
    h = np.array([[2.0, 0.5], [0.5, 1.0]])
    l_mat = np.array([[1.0, -1.0]])
    k, p = recover_gain(h, l_mat, gamma=3.0)
    np.testing.assert_allclose(k @ h, l_mat, atol=1e-12)
    np.testing.assert_allclose(p @ h, 3.0 * np.eye(2), atol=1e-12)


def test_recover_gain_rejects_indefinite_h():
    with pytest.raises(GainRecoveryError, match="singular"):
        recover_gain(np.array([[1.0, 0.0], [0.0, -1.0]]), np.array([[1.0, 0.0]]))


def test_gram_dimension_mismatch_rejected(datasets_33):
    grams = [consistency_gram(d) for d in datasets_33]
    scalar_gram = consistency_gram(
        dataset_from_matrices([[1.0]], [[1.0]], [[1.0]])
    )
    weights = CostWeights.from_qr(np.eye(2), [[0.01]])
    poly = ConstraintPolytope(np.zeros((0, 2)), np.array([[1.0], [-1.0]]))
    with pytest.raises(AssemblyError):
        adaptive_problem(grams, scalar_gram, np.array([1.0, 0.0]), weights, poly)
