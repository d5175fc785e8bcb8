"""Conic solve with post-solve verification and deterministic reconditioning.

The interior-point solver is treated as untrusted: whatever it returns is
re-checked against the original blocks, and near-feasible iterates are
repaired by raising multiplier variables (which only relaxes their own
block) before a certificate is accepted.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse

import clarabel

from .lmi import (
    ConicProblem,
    GainRecoveryError,
    SynthesisSolution,
    block_scale,
    evaluate_block,
    recover_gain,
)

__all__ = ["SolverTolerances", "SolveOutcome", "solve"]

_SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class SolverTolerances:
    """Solve and verification tolerances.

    feas_tol is the acceptance threshold for the verified certificate:
    every block must have min eigenvalue >= -feas_tol * max(1, block norm).
    """

    feas_tol: float = 1e-8
    gap_tol: float = 1e-8
    max_iter: int = 200
    repair_rounds: int = 16
    repair_growth: float = 4.0
    gamma_budget: float = 1e-3


@dataclass(frozen=True)
class SolveOutcome:
    """status: 'solved' (verified certificate), 'infeasible', or 'numerical_failure'."""

    status: str
    solution: SynthesisSolution | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def solved(self) -> bool:
        return self.status == "solved"


def _svec(mat: np.ndarray) -> np.ndarray:
    # upper triangle, column-major, off-diagonal scaled by sqrt(2)
    d = mat.shape[0]
    out = np.empty(d * (d + 1) // 2)
    p = 0
    for j in range(d):
        for i in range(j + 1):
            out[p] = mat[i, j] if i == j else mat[i, j] * _SQRT2
            p += 1
    return out


def _cone_data(problem: ConicProblem):
    # each block scaled by its own natural size; pure row scaling of the
    # conic system, so the feasible set is unchanged
    rows_i, cols_i, vals = [], [], []
    b_parts, cones, scales = [], [], []
    offset = 0
    for blk in problem.blocks:
        s = block_scale(blk)
        scales.append(s)
        b_parts.append(_svec(blk.const / s))
        for idx, coeff in blk.coeffs:
            v = _svec(-coeff / s)
            nz = np.nonzero(v)[0]
            rows_i.extend((offset + nz).tolist())
            cols_i.extend([idx] * len(nz))
            vals.extend(v[nz].tolist())
        d = blk.size
        cones.append(clarabel.PSDTriangleConeT(d))
        offset += d * (d + 1) // 2
    a = sparse.csc_matrix(
        (vals, (rows_i, cols_i)), shape=(offset, problem.nvar)
    )
    return a, np.concatenate(b_parts), cones, scales


def _verify(problem: ConicProblem, x: np.ndarray, feas_tol: float):
    failing = []
    report = {}
    for bi, blk in enumerate(problem.blocks):
        w = evaluate_block(blk, x)
        lam = float(np.min(np.linalg.eigvalsh(w)))
        bound = -feas_tol * max(1.0, float(np.linalg.norm(w)))
        report[blk.name] = (lam, bound)
        if lam < bound:
            failing.append(bi)
    return failing, report


def _repair(problem: ConicProblem, x: np.ndarray, tol: SolverTolerances):
    """Raise multipliers (then gamma) until verification passes or budgets run out."""
    x = x.copy()
    notes = {}
    failing, _ = _verify(problem, x, tol.feas_tol)

    for bi in list(failing):
        blk = problem.blocks[bi]
        if blk.eps_index is None:
            continue
        base = max(float(x[blk.eps_index]), 1e-9)
        best_lam, best_val, ok = -np.inf, base, False
        prev_lam = -np.inf
        for k in range(tol.repair_rounds + 1):
            cand = base * tol.repair_growth**k
            x[blk.eps_index] = cand
            w = evaluate_block(blk, x)
            lam = float(np.min(np.linalg.eigvalsh(w)))
            bound = -tol.feas_tol * max(1.0, float(np.linalg.norm(w)))
            if lam > best_lam:
                best_lam, best_val = lam, cand
            if lam >= bound:
                ok = True
                notes[blk.name] = f"eps*{tol.repair_growth:g}^{k}"
                break
            if lam <= prev_lam + 1e-14 * max(1.0, abs(lam)) and k >= 2:
                break  # plateau, more multiplier cannot help
            prev_lam = lam
        if not ok:
            x[blk.eps_index] = best_val

    gi = problem.layout.gamma_index
    if gi is not None:
        failing, _ = _verify(problem, x, tol.feas_tol)
        gamma_coupled = [
            bi for bi in failing
            if any(idx == gi for idx, _ in problem.blocks[bi].coeffs)
        ]
        if gamma_coupled and x[gi] > 0:
            base = float(x[gi])
            for t in range(1, 9):
                x[gi] = base * (1.0 + tol.gamma_budget * t / 8.0)
                still = [
                    bi for bi in gamma_coupled
                    if _verify_one(problem.blocks[bi], x, tol.feas_tol) < 0
                ]
                if not still:
                    notes["gamma"] = f"*{x[gi] / base:.6f}"
                    break
            else:
                x[gi] = base

    failing, report = _verify(problem, x, tol.feas_tol)
    return x, failing, report, notes


def _verify_one(blk, x, feas_tol) -> float:
    w = evaluate_block(blk, x)
    lam = float(np.min(np.linalg.eigvalsh(w)))
    return lam + feas_tol * max(1.0, float(np.linalg.norm(w)))


def _build_solution(problem, x, raw_status, diag) -> SynthesisSolution:
    layout = problem.layout
    h, l_mat, gamma, eps_stab, eps_perf = layout.unpack(x)
    k, p = recover_gain(h, l_mat, gamma)
    meta = dict(diag)
    meta["margins"] = problem.margins()
    return SynthesisSolution(
        h=h, l=l_mat, gamma=gamma, eps_stab=eps_stab, eps_perf=eps_perf,
        k=k, p=p, solver_status=raw_status,
        objective=float(problem.objective @ x), metadata=meta,
    )


def solve(problem: ConicProblem, tol: SolverTolerances | None = None) -> SolveOutcome:
    """Solve a synthesis SDP and return a verified certificate or a failure verdict.

    Deterministic for identical inputs and tolerances.  A returned 'solved'
    outcome always carries a solution whose blocks all passed verification;
    'infeasible' is only reported on a solver infeasibility certificate.
    """
    tol = tol or SolverTolerances()
    a, b, cones, _ = _cone_data(problem)
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = tol.max_iter
    settings.tol_feas = min(tol.feas_tol, 1e-8)
    settings.tol_gap_abs = tol.gap_tol
    settings.tol_gap_rel = tol.gap_tol
    p_mat = sparse.csc_matrix((problem.nvar, problem.nvar))
    t0 = time.perf_counter()
    sol = clarabel.DefaultSolver(
        p_mat, problem.objective, a, b, cones, settings
    ).solve()
    wall = time.perf_counter() - t0
    raw = str(sol.status)
    diag = {
        "raw_status": raw,
        "iterations": int(sol.iterations),
        "solve_time": wall,
        "repaired": False,
    }

    if raw == "PrimalInfeasible":
        return SolveOutcome("infeasible", None, diag)
    x = np.asarray(sol.x, dtype=float)
    if x.size != problem.nvar or not np.all(np.isfinite(x)):
        return SolveOutcome("numerical_failure", None, diag)
    if raw == "DualInfeasible":
        return SolveOutcome("numerical_failure", None, diag)

    failing, report = _verify(problem, x, tol.feas_tol)
    if failing:
        x, failing, report, notes = _repair(problem, x, tol)
        diag["repaired"] = True
        diag["repair_notes"] = notes
    diag["verification"] = {
        name: lam for name, (lam, _) in report.items()
    }
    if failing:
        diag["failed_blocks"] = [problem.blocks[bi].name for bi in failing]
        return SolveOutcome("numerical_failure", None, diag)
    try:
        solution = _build_solution(problem, x, raw, diag)
    except GainRecoveryError as exc:
        diag["gain_recovery"] = str(exc)
        return SolveOutcome("numerical_failure", None, diag)
    return SolveOutcome("solved", solution, diag)
