"""Receding-horizon gain synthesis with a layered fallback chain.

Every step tries to certify a fresh gain from the offline vertex data plus
the current online window.  When the fresh problem cannot be solved (the
window may straddle a plant change and admit no consistent system, or the
solver may fail numerically), the step falls back to re-solving with the
window behind the last certificate, and finally to reusing the last gain,
which stays safe inside that certificate's invariant ellipsoid.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import (
    ConsistencyGram,
    RollingWindow,
    consistency_gram,
    least_squares_fit,
    push_sample,
)
from .lmi import (
    ConstraintPolytope,
    CostWeights,
    DEFAULT_FLOOR,
    DEFAULT_MARGIN_COEF,
    SynthesisSolution,
    adaptive_problem,
    robust_problem,
    stabilization_problem,
)
from .solver import SolveOutcome, SolverTolerances, solve

__all__ = [
    "MODES",
    "AssumptionError",
    "ControlDecision",
    "StepRecord",
    "ControllerState",
    "make_controller",
    "adaptive_step",
    "robust_step",
    "record_transition",
    "certify_decrease",
    "DecreaseReport",
]

MODES = ("solved_fresh", "resolved_previous_window", "reused_gain", "robust_warmup")

DEFAULT_RESIDUAL_GATE = 1e-6


class AssumptionError(RuntimeError):
    """The offline data does not certify a common stabilizing gain."""


@dataclass(frozen=True)
class ControlDecision:
    """One step's output: the input to apply plus the certificate behind it.

    Attributes:
        u: control input, u = K x_k.
        k_gain: gain applied this step.
        p: quadratic certificate matrix.
        gamma: certified cost bound (level of the invariant ellipsoid).
        mode: which rung of the fallback chain produced the gain.
        lyapunov: certificate value x_k' P x_k.
    """

    u: np.ndarray
    k_gain: np.ndarray
    p: np.ndarray
    gamma: float
    mode: str
    lyapunov: float
    iterations: int = 0
    solve_time: float = 0.0


@dataclass(frozen=True)
class StepRecord:
    k: int
    x: tuple
    u: tuple
    gamma: float
    mode: str
    lyapunov: float
    iterations: int
    solve_time: float


@dataclass(frozen=True)
class ControllerState:
    """Immutable controller snapshot; each step returns an updated copy."""

    grams: tuple
    window: RollingWindow
    weights: CostWeights
    polytope: ConstraintPolytope
    tolerances: SolverTolerances
    margin_coef: float = DEFAULT_MARGIN_COEF
    floor: float = DEFAULT_FLOOR
    residual_gate: float = DEFAULT_RESIDUAL_GATE
    last_solution: SynthesisSolution | None = None
    last_window: RollingWindow | None = None
    trace: tuple = ()
    force_reuse_from: int | None = None
    # set when the window stops being consistent (the plant moved), cleared on
    # the next adopted fresh certificate; while set, the inherited certificate
    # describes the old regime and is not used as an adoption baseline
    gate_stale: bool = False

    @property
    def step_index(self) -> int:
        return len(self.trace)


def make_controller(
    vertex_datasets,
    capacity: int,
    weights: CostWeights,
    polytope: ConstraintPolytope,
    tolerances: SolverTolerances | None = None,
    margin_coef: float = DEFAULT_MARGIN_COEF,
    floor: float = DEFAULT_FLOOR,
    residual_gate: float = DEFAULT_RESIDUAL_GATE,
    check_stabilizable: bool = True,
    force_reuse_from: int | None = None,
) -> ControllerState:
    """Build the initial state and certify the offline data supports a common gain.

    Raises:
        AssumptionError: the vertex-data feasibility problem cannot be solved,
            so no controller can be started from this data.
    """
    tolerances = tolerances or SolverTolerances()
    grams = tuple(consistency_gram(ds) for ds in vertex_datasets)
    if check_stabilizable:
        outcome = solve(stabilization_problem(list(grams), floor=floor), tolerances)
        if not outcome.solved:
            raise AssumptionError(
                "offline vertex data does not certify a common stabilizing gain"
                f" (solver: {outcome.status}, {outcome.diagnostics.get('raw_status')})"
            )
    n, m = weights.n, weights.m
    return ControllerState(
        grams=grams,
        window=RollingWindow.empty(capacity, n, m),
        weights=weights,
        polytope=polytope,
        tolerances=tolerances,
        margin_coef=margin_coef,
        floor=floor,
        residual_gate=residual_gate,
        force_reuse_from=force_reuse_from,
    )


def _state_scale(x_k) -> float:
    s = float(np.linalg.norm(np.asarray(x_k, dtype=float)))
    return s if s > 1e-100 else 1.0


def _scaled_inputs(state: ControllerState, x_k):
    # The certificate LMIs are jointly homogeneous in (H, L, gamma, eps), so
    # the synthesis can run in units of the current state norm.  This keeps
    # the conic problem at O(1) scale along the whole trajectory and makes
    # gamma carry full relative precision even as x decays toward zero.
    # Data Gramians are left in physical units (the multipliers absorb the
    # scale); the absolute input and state limits become 1/s in state units,
    # which is the same as scaling the constraint rows by s.
    s = _state_scale(x_k)
    x_hat = np.asarray(x_k, dtype=float).ravel() / s
    poly = ConstraintPolytope(state.polytope.w_x * s, state.polytope.w_u * s)
    return s, x_hat, poly


def _physical_solution(solution: SynthesisSolution, s: float) -> SynthesisSolution:
    if s == 1.0:
        return solution
    # K and P are invariant under the state scaling; H, L, gamma, eps are not
    return replace(
        solution,
        h=solution.h * s * s,
        l=solution.l * s * s,
        gamma=None if solution.gamma is None else solution.gamma * s * s,
        eps_stab=tuple(e * s * s for e in solution.eps_stab),
        eps_perf=tuple(e * s * s for e in solution.eps_perf),
        metadata={**solution.metadata, "state_scale": s},
    )


def _solve_adaptive(state: ControllerState, x_k, window_gram: ConsistencyGram) -> SolveOutcome:
    s, x_hat, poly = _scaled_inputs(state, x_k)
    problem = adaptive_problem(
        list(state.grams), window_gram, x_hat, state.weights, poly,
        state.margin_coef, state.floor,
    )
    outcome = solve(problem, state.tolerances)
    if outcome.solved:
        outcome = replace(outcome, solution=_physical_solution(outcome.solution, s))
    return outcome


def _solve_robust(state: ControllerState, x_k) -> SolveOutcome:
    s, x_hat, poly = _scaled_inputs(state, x_k)
    problem = robust_problem(
        list(state.grams), x_hat, state.weights, poly,
        state.margin_coef, state.floor,
    )
    outcome = solve(problem, state.tolerances)
    if outcome.solved:
        outcome = replace(outcome, solution=_physical_solution(outcome.solution, s))
    return outcome


def _accept(state: ControllerState, x_k, candidate: SynthesisSolution) -> bool:
    """Gate on adopting a newly solved certificate.

    A fresh solution replaces the inherited one only when (a) its own level
    covers the current state and (b) it does not expand the inherited
    certificate's value at the current state.  Re-solving changes the online
    Gramian, and the new optimum is not guaranteed to stay below the old
    certificate; expanding certificates would break the tail cost bound
    gamma_k, so such solutions are discarded in favor of the inherited gain.
    """
    # slack sits above solver noise (~gap_tol relative) but far below the
    # per-step contraction the certificates enforce, so admitted expansions
    # can never accumulate into a bound violation
    slack = max(1e-9, 10.0 * state.tolerances.gap_tol)
    x = np.asarray(x_k, dtype=float).ravel()
    v_new = float(x @ candidate.p @ x)
    if v_new > candidate.gamma * (1.0 + slack) + 1e-15:
        return False
    if state.last_solution is not None and not state.gate_stale:
        v_old = float(x @ state.last_solution.p @ x)
        if v_new > v_old * (1.0 + slack) + 1e-15:
            return False
    return True


def _decide(state, x_k, solution, mode, outcome=None) -> tuple[ControlDecision, ControllerState]:
    x_k = np.asarray(x_k, dtype=float).ravel()
    u = solution.k @ x_k
    v = float(x_k @ solution.p @ x_k)
    diag = outcome.diagnostics if outcome is not None else {}
    decision = ControlDecision(
        u=u, k_gain=solution.k, p=solution.p,
        gamma=float(solution.gamma), mode=mode, lyapunov=v,
        iterations=int(diag.get("iterations", 0)),
        solve_time=float(diag.get("solve_time", 0.0)),
    )
    record = StepRecord(
        k=state.step_index, x=tuple(float(v_) for v_ in x_k),
        u=tuple(float(v_) for v_ in u), gamma=decision.gamma, mode=mode,
        lyapunov=v, iterations=decision.iterations, solve_time=decision.solve_time,
    )
    return decision, replace(state, trace=state.trace + (record,))


def adaptive_step(state: ControllerState, x_k) -> tuple[ControlDecision, ControllerState]:
    """Choose the input for the current state, updating the certificate if possible.

    The decision chain, in order:
      1. window not yet full: solve the vertex-only baseline (mode robust_warmup);
      2. window full and its samples admit a consistent system: solve the
         fresh online problem (solved_fresh);
      3. re-solve with the window behind the last certificate
         (resolved_previous_window);
      4. reuse the last gain unchanged (reused_gain).

    A successful solve on rungs 1-3 is adopted only if it passes the
    certificate gate (does not expand the inherited certificate at x_k);
    otherwise the step reuses the last gain.

    Raises:
        AssumptionError: every rung failed and no previous gain exists.
    """
    k = state.step_index
    if (
        state.force_reuse_from is not None
        and k >= state.force_reuse_from
        and state.last_solution is not None
    ):
        # test hook: pin the gain from a given step onward
        return _decide(state, x_k, state.last_solution, "reused_gain")

    if not state.window.full:
        outcome = _solve_robust(state, x_k)
        if outcome.solved and _accept(state, x_k, outcome.solution):
            new_state = replace(state, last_solution=outcome.solution)
            return _decide(new_state, x_k, outcome.solution, "robust_warmup", outcome)
        if state.last_solution is not None:
            return _decide(state, x_k, state.last_solution, "reused_gain")
        raise AssumptionError(
            f"baseline synthesis failed before the window filled ({outcome.status})"
        )

    window_ds = state.window.as_dataset()
    _, residual = least_squares_fit(window_ds)
    if residual > state.residual_gate:
        # the samples admit no single system: the plant moved mid-window, so
        # the inherited certificate no longer anchors the adoption gate
        state = replace(state, gate_stale=True)
    else:
        outcome = _solve_adaptive(state, x_k, consistency_gram(window_ds))
        if outcome.solved and _accept(state, x_k, outcome.solution):
            new_state = replace(
                state, last_solution=outcome.solution, last_window=state.window,
                gate_stale=False,
            )
            return _decide(new_state, x_k, outcome.solution, "solved_fresh", outcome)
    # no consistent system in the window, the fresh solve failed, or its
    # certificate expanded: fall back to the window behind the last adoption

    if state.last_window is not None:
        outcome = _solve_adaptive(
            state, x_k, consistency_gram(state.last_window.as_dataset())
        )
        if outcome.solved and _accept(state, x_k, outcome.solution):
            new_state = replace(state, last_solution=outcome.solution)
            return _decide(
                new_state, x_k, outcome.solution, "resolved_previous_window", outcome
            )

    if state.last_solution is not None:
        return _decide(state, x_k, state.last_solution, "reused_gain")
    raise AssumptionError("no certificate available: all synthesis attempts failed")


def robust_step(state: ControllerState, x_k) -> tuple[ControlDecision, ControllerState]:
    """Baseline controller: certify the cost bound over the vertex data every step."""
    outcome = _solve_robust(state, x_k)
    if outcome.solved and _accept(state, x_k, outcome.solution):
        new_state = replace(state, last_solution=outcome.solution)
        return _decide(new_state, x_k, outcome.solution, "solved_fresh", outcome)
    if state.last_solution is not None:
        return _decide(state, x_k, state.last_solution, "reused_gain")
    raise AssumptionError(f"baseline synthesis failed at the first step ({outcome.status})")


def record_transition(state: ControllerState, x, u, x_next) -> ControllerState:
    """Push the observed (x, u, x+) sample into the rolling window."""
    return replace(state, window=push_sample(state.window, x, u, x_next))


@dataclass(frozen=True)
class DecreaseReport:
    """Min eigenvalues of P - (A+BK)' P (A+BK) per system and per sampled hull point."""

    system_margins: tuple
    combination_margins: tuple

    @property
    def all_positive(self) -> bool:
        return all(m > 0 for m in self.system_margins + self.combination_margins)


def certify_decrease(solution, systems, n_combinations: int = 50, seed: int = 0) -> DecreaseReport:
    """Check the quadratic decrease condition against explicit systems.

    Accepts a SynthesisSolution or a (K, P) pair.  Random convex combinations
    of the given systems are sampled reproducibly from the seed.
    """
    if isinstance(solution, SynthesisSolution):
        k_gain, p = solution.k, solution.p
    else:
        k_gain, p = solution
    systems = list(systems)

    def margin(a, b):
        acl = a + b @ k_gain
        diff = p - acl.T @ p @ acl
        return float(np.min(np.linalg.eigvalsh((diff + diff.T) / 2.0)))

    sys_margins = tuple(margin(s.a, s.b) for s in systems)
    combo_margins = []
    if len(systems) >= 2 and n_combinations > 0:
        rng = np.random.default_rng(seed)
        for _ in range(n_combinations):
            lam = rng.dirichlet(np.ones(len(systems)))
            a = sum(w * s.a for w, s in zip(lam, systems))
            b = sum(w * s.b for w, s in zip(lam, systems))
            combo_margins.append(margin(a, b))
    return DecreaseReport(sys_margins, tuple(combo_margins))
