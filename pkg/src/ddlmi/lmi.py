"""Affine matrix-inequality blocks and synthesis problem assembly.

Decision variables are packed into one flat vector in a fixed order:
upper-triangle entries of the symmetric H (row-major), entries of L
(row-major), then gamma (when present), then one multiplier per offline
vertex block, then the performance multipliers.  Every inequality is stored
as `const + sum_i x_i * coeff_i >= 0` (positive semidefinite) with symmetric
coefficient matrices, so problems stay solver-agnostic and serializable.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataset import ConsistencyGram

__all__ = [
    "CostWeights",
    "ConstraintPolytope",
    "EllipsoidalSet",
    "VariableLayout",
    "LMIBlock",
    "ConicProblem",
    "SynthesisSolution",
    "AssemblyError",
    "GainRecoveryError",
    "make_layout",
    "robust_stabilization_blocks",
    "performance_block",
    "constraint_blocks",
    "floor_blocks",
    "normalization_block",
    "assemble",
    "adaptive_problem",
    "robust_problem",
    "stabilization_problem",
    "evaluate_block",
    "block_scale",
    "recover_gain",
    "DEFAULT_MARGIN_COEF",
    "DEFAULT_FLOOR",
]

DEFAULT_MARGIN_COEF = 1e-7
DEFAULT_FLOOR = 1e-6


class AssemblyError(ValueError):
    """Raised when blocks or dimensions are inconsistent."""


class GainRecoveryError(np.linalg.LinAlgError):
    """Raised when H is too close to singular to recover K = L H^-1."""


# ---------------------------------------------------------------------------
# weights, polytopes, ellipsoids
# ---------------------------------------------------------------------------


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root with negative eigenvalues clipped at 0."""
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return vecs @ np.diag(np.sqrt(vals)) @ vecs.T


@dataclass(frozen=True)
class CostWeights:
    """Stage-cost weights Q (state, PSD) and R (input, PD) plus their factors.

    q_factor and r_factor satisfy q_factor' q_factor = Q and
    r_factor' r_factor = R; they enter the cost rows of the performance
    blocks directly.
    """

    q: np.ndarray
    r: np.ndarray
    q_factor: np.ndarray
    r_factor: np.ndarray

    @staticmethod
    def from_qr(q, r) -> "CostWeights":
        q = np.atleast_2d(np.asarray(q, dtype=float))
        r = np.atleast_2d(np.asarray(r, dtype=float))
        q = (q + q.T) / 2.0
        r = (r + r.T) / 2.0
        if np.min(np.linalg.eigvalsh(q)) < -1e-12 * max(1.0, np.linalg.norm(q)):
            raise AssemblyError("Q must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(r)) <= 0.0:
            raise AssemblyError("R must be positive definite")
        return CostWeights(q, r, _psd_sqrt(q), _psd_sqrt(r))

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def m(self) -> int:
        return self.r.shape[0]


@dataclass(frozen=True)
class ConstraintPolytope:
    """Polytopes W_x x <= 1 (rows r) and W_u u <= 1 (rows l); zero rows rejected."""

    w_x: np.ndarray
    w_u: np.ndarray

    @staticmethod
    def from_rows(w_x, w_u, n: int, m: int) -> "ConstraintPolytope":
        w_x = np.asarray(w_x, dtype=float).reshape(-1, n) if np.size(w_x) else np.zeros((0, n))
        w_u = np.asarray(w_u, dtype=float).reshape(-1, m) if np.size(w_u) else np.zeros((0, m))
        for name, mat in (("W_x", w_x), ("W_u", w_u)):
            for i, row in enumerate(mat):
                if not np.any(row):
                    raise AssemblyError(f"{name} row {i} is zero")
        return ConstraintPolytope(w_x, w_u)

    @property
    def n_state_rows(self) -> int:
        return self.w_x.shape[0]

    @property
    def n_input_rows(self) -> int:
        return self.w_u.shape[0]


@dataclass(frozen=True)
class EllipsoidalSet:
    """Sublevel set {x : x' P x <= gamma} of a quadratic certificate."""

    p: np.ndarray
    gamma: float

    def value(self, x) -> float:
        x = np.asarray(x, dtype=float).ravel()
        return float(x @ self.p @ x)

    def contains(self, x, rel_tol: float = 1e-9) -> bool:
        return self.value(x) <= self.gamma * (1.0 + rel_tol)


# ---------------------------------------------------------------------------
# variable layout
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VariableLayout:
    """Index map from structured variables (H, L, gamma, multipliers) to the flat vector."""

    n: int
    m: int
    h_pairs: tuple
    l_offset: int
    gamma_index: int | None
    eps_stab: tuple
    eps_perf: tuple
    names: tuple

    @property
    def nvar(self) -> int:
        return len(self.names)

    def h_index(self, i: int, j: int) -> int:
        return self.h_pairs.index((min(i, j), max(i, j)))

    def l_index(self, a: int, b: int) -> int:
        return self.l_offset + a * self.n + b

    def unpack(self, x: np.ndarray):
        """Split a flat vector into (H, L, gamma, eps_stab, eps_perf)."""
        x = np.asarray(x, dtype=float).ravel()
        h = np.zeros((self.n, self.n))
        for k, (i, j) in enumerate(self.h_pairs):
            h[i, j] = x[k]
            h[j, i] = x[k]
        l_mat = x[self.l_offset : self.l_offset + self.m * self.n].reshape(self.m, self.n)
        gamma = float(x[self.gamma_index]) if self.gamma_index is not None else None
        eps_stab = np.array([x[i] for i in self.eps_stab])
        eps_perf = np.array([x[i] for i in self.eps_perf])
        return h, l_mat, gamma, eps_stab, eps_perf


def make_layout(n: int, m: int, n_stab: int, n_perf: int, with_gamma: bool) -> VariableLayout:
    """Fixed ordering: H upper triangle row-major, L row-major, gamma, multipliers."""
    h_pairs = tuple((i, j) for i in range(n) for j in range(i, n))
    names = [f"H[{i},{j}]" for (i, j) in h_pairs]
    l_offset = len(names)
    names += [f"L[{a},{b}]" for a in range(m) for b in range(n)]
    gamma_index = None
    if with_gamma:
        gamma_index = len(names)
        names.append("gamma")
    eps_stab = tuple(range(len(names), len(names) + n_stab))
    names += [f"eps_stab[{v}]" for v in range(n_stab)]
    eps_perf = tuple(range(len(names), len(names) + n_perf))
    if n_perf == 1:
        names.append("eps_perf")
    else:
        names += [f"eps_perf[{v}]" for v in range(n_perf)]
    return VariableLayout(n, m, h_pairs, l_offset, gamma_index, eps_stab, eps_perf, tuple(names))


def _h_basis(layout: VariableLayout):
    """Symmetric unit matrices paired with their flat-vector index."""
    out = []
    for k, (i, j) in enumerate(layout.h_pairs):
        e = np.zeros((layout.n, layout.n))
        e[i, j] = 1.0
        e[j, i] = 1.0
        out.append((k, e))
    return out


def _l_basis(layout: VariableLayout):
    out = []
    for a in range(layout.m):
        for b in range(layout.n):
            e = np.zeros((layout.m, layout.n))
            e[a, b] = 1.0
            out.append((layout.l_index(a, b), e))
    return out


# ---------------------------------------------------------------------------
# blocks
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LMIBlock:
    """One inequality const + sum_i x_i coeff_i >= 0 (PSD).

    Any strictness margin is already folded into `const` (as -margin*I) and
    recorded in `margin`.  `eps_index` names the multiplier variable that can
    be raised to recondition this block, if one exists.
    """

    name: str
    kind: str
    const: np.ndarray
    coeffs: tuple
    margin: float = 0.0
    eps_index: int | None = None

    @property
    def size(self) -> int:
        return self.const.shape[0]


def evaluate_block(block: LMIBlock, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    out = block.const.copy()
    for idx, coeff in block.coeffs:
        out += x[idx] * coeff
    return out


def block_scale(block: LMIBlock) -> float:
    """Natural size of a block: the largest Frobenius norm among its matrices."""
    norms = [np.linalg.norm(block.const)]
    norms += [np.linalg.norm(c) for _, c in block.coeffs]
    return max(1.0, *norms)


def _apply_margin(name, kind, const, coeffs, margin_coef, eps_index=None) -> LMIBlock:
    # margin is relative to the block's own scale so mixed-magnitude problems
    # get uniform strictness
    coeffs = tuple((i, c) for i, c in coeffs)
    scale = max([np.linalg.norm(const)] + [np.linalg.norm(c) for _, c in coeffs] + [1.0])
    margin = margin_coef * scale
    if margin:
        const = const - margin * np.eye(const.shape[0])
    return LMIBlock(name, kind, const, coeffs, margin, eps_index)


def _padded_gram(gram: ConsistencyGram, dim: int) -> np.ndarray:
    """Zero-pad the (2n+m)-sized Gramian into the top-left of a dim-sized block."""
    out = np.zeros((dim, dim))
    s = gram.size
    out[:s, :s] = gram.matrix
    return out


def robust_stabilization_blocks(
    grams: list[ConsistencyGram],
    layout: VariableLayout,
    margin_coef: float = 0.0,
) -> list[LMIBlock]:
    """One multiplier inequality per vertex dataset certifying a common (H, L).

    Block v has size 3n+m and row partition (n | n | m | n):

        [[ H    0    0    0 ]
         [ 0   -H  -L'    0 ]    minus  eps_v * (Gramian of vertex v,
         [ 0   -L    0    L ]            zero-padded past row 2n+m)
         [ 0    0   L'    H ]]
    """
    if not grams:
        raise AssemblyError("need at least one vertex Gramian")
    n, m = layout.n, layout.m
    if len(grams) != len(layout.eps_stab):
        raise AssemblyError(
            f"{len(grams)} Gramians but layout has {len(layout.eps_stab)} stabilization multipliers"
        )
    for g in grams:
        if (g.n, g.m) != (n, m):
            raise AssemblyError(f"Gramian dims ({g.n},{g.m}) do not match layout ({n},{m})")
    d = 3 * n + m
    r1, r2, r3, r4 = slice(0, n), slice(n, 2 * n), slice(2 * n, 2 * n + m), slice(2 * n + m, d)
    blocks = []
    for v, gram in enumerate(grams):
        coeffs = []
        for idx, e in _h_basis(layout):
            c = np.zeros((d, d))
            c[r1, r1] = e
            c[r2, r2] = -e
            c[r4, r4] = e
            coeffs.append((idx, c))
        for idx, e in _l_basis(layout):
            c = np.zeros((d, d))
            c[r3, r2] = -e
            c[r2, r3] = -e.T
            c[r3, r4] = e
            c[r4, r3] = e.T
            coeffs.append((idx, c))
        eps_idx = layout.eps_stab[v]
        coeffs.append((eps_idx, -_padded_gram(gram, d)))
        blocks.append(
            _apply_margin(
                f"stab[{gram.label or v}]", "finsler_stab", np.zeros((d, d)), coeffs,
                margin_coef, eps_idx,
            )
        )
    return blocks


def performance_block(
    gram: ConsistencyGram,
    weights: CostWeights,
    layout: VariableLayout,
    eps_index: int,
    margin_coef: float = 0.0,
    tag: str = "o",
) -> list[LMIBlock]:
    """Cost-bound pair: the multiplier inequality and its Schur companion.

    First block, size 4n+2m, row partition (n | n | m | n | n+m), with
    Phi = [q_factor @ H; r_factor @ L] stacked (n+m) x n:

        [[ H   0   0   0    0   ]
         [ 0   0   0   H    0   ]
         [ 0   0   0   L    0   ]     minus  eps * (Gramian, zero-padded
         [ 0   H   L'  H   Phi' ]             past row 2n+m)
         [ 0   0   0  Phi gamma*I]]

    Second block, size 2n+m:  [[H, Phi'], [Phi, gamma*I]].
    """
    n, m = layout.n, layout.m
    if layout.gamma_index is None:
        raise AssemblyError("performance blocks need a gamma variable")
    if (gram.n, gram.m) != (n, m):
        raise AssemblyError(f"Gramian dims ({gram.n},{gram.m}) do not match layout ({n},{m})")
    if (weights.n, weights.m) != (n, m):
        raise AssemblyError("weight dims do not match layout")
    qf, rf = weights.q_factor, weights.r_factor
    d = 4 * n + 2 * m
    r1, r2, r3 = slice(0, n), slice(n, 2 * n), slice(2 * n, 2 * n + m)
    r4, r5 = slice(2 * n + m, 3 * n + m), slice(3 * n + m, d)

    def phi_of_h(e):
        # d Phi / d H_e = [qf @ e; 0]
        ph = np.zeros((n + m, n))
        ph[:n, :] = qf @ e
        return ph

    def phi_of_l(e):
        ph = np.zeros((n + m, n))
        ph[n:, :] = rf @ e
        return ph

    coeffs = []
    for idx, e in _h_basis(layout):
        c = np.zeros((d, d))
        c[r1, r1] = e
        c[r2, r4] = e
        c[r4, r2] = e
        c[r4, r4] = e
        ph = phi_of_h(e)
        c[r4, r5] += ph.T
        c[r5, r4] += ph
        coeffs.append((idx, c))
    for idx, e in _l_basis(layout):
        c = np.zeros((d, d))
        c[r3, r4] = e
        c[r4, r3] = e.T
        ph = phi_of_l(e)
        c[r4, r5] += ph.T
        c[r5, r4] += ph
        coeffs.append((idx, c))
    g = np.zeros((d, d))
    g[r5, r5] = np.eye(n + m)
    coeffs.append((layout.gamma_index, g))
    coeffs.append((eps_index, -_padded_gram(gram, d)))
    main = _apply_margin(
        f"perf[{tag}]", "finsler_perf", np.zeros((d, d)), coeffs, margin_coef, eps_index
    )

    ds = 2 * n + m
    s1, s2 = slice(0, n), slice(n, ds)
    coeffs_s = []
    for idx, e in _h_basis(layout):
        c = np.zeros((ds, ds))
        c[s1, s1] = e
        ph = phi_of_h(e)
        c[s1, s2] += ph.T
        c[s2, s1] += ph
        coeffs_s.append((idx, c))
    for idx, e in _l_basis(layout):
        c = np.zeros((ds, ds))
        ph = phi_of_l(e)
        c[s1, s2] += ph.T
        c[s2, s1] += ph
        coeffs_s.append((idx, c))
    g = np.zeros((ds, ds))
    g[s2, s2] = np.eye(n + m)
    coeffs_s.append((layout.gamma_index, g))
    schur = _apply_margin(f"cost_schur[{tag}]", "schur", np.zeros((ds, ds)), coeffs_s, 0.0)
    return [main, schur]


def constraint_blocks(
    x_k,
    poly: ConstraintPolytope,
    layout: VariableLayout,
    margin_coef: float = DEFAULT_MARGIN_COEF,
) -> list[LMIBlock]:
    """Ellipsoid blocks: state membership, one row per state limit, one per input limit.

    Membership:   [[1, x'], [x, H]] >= 0        (x inside the H-ellipsoid)
    State row:    [[1, w_x H], [(w_x H)', H]]   (ellipsoid inside w_x x <= 1)
    Input row:    [[1, w_u L], [(w_u L)', H]]   (gain output inside w_u u <= 1)
    """
    n = layout.n
    x_k = np.asarray(x_k, dtype=float).ravel()
    if x_k.size != n:
        raise AssemblyError(f"state has dim {x_k.size}, expected {n}")
    if poly.w_x.shape[1] != n or poly.w_u.shape[1] != layout.m:
        raise AssemblyError("polytope dims do not match layout")
    d = 1 + n
    blocks = []

    const = np.zeros((d, d))
    const[0, 0] = 1.0
    const[0, 1:] = x_k
    const[1:, 0] = x_k
    coeffs = []
    for idx, e in _h_basis(layout):
        c = np.zeros((d, d))
        c[1:, 1:] = e
        coeffs.append((idx, c))
    blocks.append(_apply_margin("membership", "state_membership", const, coeffs, margin_coef))

    for i, w in enumerate(poly.w_x):
        const = np.zeros((d, d))
        const[0, 0] = 1.0
        coeffs = []
        for idx, e in _h_basis(layout):
            c = np.zeros((d, d))
            c[1:, 1:] = e
            row = w @ e
            c[0, 1:] += row
            c[1:, 0] += row
            coeffs.append((idx, c))
        blocks.append(_apply_margin(f"state_limit[{i}]", "state_limit", const, coeffs, margin_coef))

    for j, w in enumerate(poly.w_u):
        const = np.zeros((d, d))
        const[0, 0] = 1.0
        coeffs = []
        for idx, e in _h_basis(layout):
            c = np.zeros((d, d))
            c[1:, 1:] = e
            coeffs.append((idx, c))
        for idx, e in _l_basis(layout):
            c = np.zeros((d, d))
            row = w @ e
            c[0, 1:] += row
            c[1:, 0] += row
            coeffs.append((idx, c))
        blocks.append(_apply_margin(f"input_limit[{j}]", "input_limit", const, coeffs, margin_coef))

    return blocks


def floor_blocks(layout: VariableLayout, floor: float = DEFAULT_FLOOR) -> list[LMIBlock]:
    """Scalar lower bounds gamma >= floor and eps >= floor (open positivity is not conic)."""
    blocks = []
    targets = []
    if layout.gamma_index is not None:
        targets.append((layout.gamma_index, "gamma"))
    targets += [(i, layout.names[i]) for i in layout.eps_stab]
    targets += [(i, layout.names[i]) for i in layout.eps_perf]
    for idx, name in targets:
        blocks.append(
            LMIBlock(
                f"floor[{name}]", "floor",
                np.array([[-floor]]), ((idx, np.array([[1.0]])),),
            )
        )
    return blocks


def normalization_block(layout: VariableLayout) -> LMIBlock:
    """H >= I, pinning the scale of feasibility-only problems.

    The multiplier inequalities are homogeneous in (H, L, eps), so without
    this block a solver may return an arbitrarily small H; any certificate
    with H positive definite rescales to satisfy it.
    """
    n = layout.n
    coeffs = []
    for idx, e in _h_basis(layout):
        coeffs.append((idx, e.copy()))
    return LMIBlock("normalization", "normalization", -np.eye(n), tuple(coeffs))


# ---------------------------------------------------------------------------
# problems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConicProblem:
    """A solver-agnostic SDP: minimize c'x subject to every block being PSD."""

    layout: VariableLayout
    blocks: tuple
    objective: np.ndarray
    objective_name: str

    @property
    def nvar(self) -> int:
        return self.layout.nvar

    def margins(self) -> dict:
        return {b.name: b.margin for b in self.blocks if b.margin}


def assemble(blocks, layout: VariableLayout, objective: str = "gamma") -> ConicProblem:
    """Bundle blocks into a problem, validating shapes and variable indices.

    objective: "gamma" minimizes the cost bound, "multiplier_sum" minimizes
    the sum of all multipliers (used by feasibility-only problems to make the
    returned certificate deterministic).
    """
    blocks = tuple(blocks)
    if not blocks:
        raise AssemblyError("no blocks to assemble")
    for b in blocks:
        if b.const.shape[0] != b.const.shape[1]:
            raise AssemblyError(f"block {b.name} constant is not square")
        for idx, c in b.coeffs:
            if not 0 <= idx < layout.nvar:
                raise AssemblyError(f"block {b.name} references variable {idx} outside layout")
            if c.shape != b.const.shape:
                raise AssemblyError(f"block {b.name} coefficient shape mismatch")
    c = np.zeros(layout.nvar)
    if objective == "gamma":
        if layout.gamma_index is None:
            raise AssemblyError("layout has no gamma variable")
        c[layout.gamma_index] = 1.0
    elif objective == "multiplier_sum":
        for i in layout.eps_stab + layout.eps_perf:
            c[i] = 1.0
    else:
        raise AssemblyError(f"unknown objective {objective!r}")
    return ConicProblem(layout, blocks, c, objective)


def adaptive_problem(
    vertex_grams: list[ConsistencyGram],
    window_gram: ConsistencyGram,
    x_k,
    weights: CostWeights,
    poly: ConstraintPolytope,
    margin_coef: float = DEFAULT_MARGIN_COEF,
    floor: float = DEFAULT_FLOOR,
) -> ConicProblem:
    """Per-step synthesis: vertex stabilization blocks plus one online cost block.

    Minimizes the cost bound gamma over H, L, gamma and the multipliers.
    """
    layout = make_layout(weights.n, weights.m, len(vertex_grams), 1, with_gamma=True)
    blocks = robust_stabilization_blocks(vertex_grams, layout)
    blocks += performance_block(window_gram, weights, layout, layout.eps_perf[0])
    blocks += constraint_blocks(x_k, poly, layout, margin_coef)
    blocks += floor_blocks(layout, floor)
    return assemble(blocks, layout, "gamma")


def robust_problem(
    vertex_grams: list[ConsistencyGram],
    x_k,
    weights: CostWeights,
    poly: ConstraintPolytope,
    margin_coef: float = DEFAULT_MARGIN_COEF,
    floor: float = DEFAULT_FLOOR,
) -> ConicProblem:
    """Baseline synthesis: the cost bound is enforced per vertex dataset instead of online data."""
    n_v = len(vertex_grams)
    layout = make_layout(weights.n, weights.m, n_v, n_v, with_gamma=True)
    blocks = robust_stabilization_blocks(vertex_grams, layout)
    for v, gram in enumerate(vertex_grams):
        # one cost pair per vertex; they share gamma, so the bound covers the hull
        blocks += performance_block(
            gram, weights, layout, layout.eps_perf[v], tag=gram.label or str(v)
        )
    blocks += constraint_blocks(x_k, poly, layout, margin_coef)
    blocks += floor_blocks(layout, floor)
    return assemble(blocks, layout, "gamma")


def stabilization_problem(
    vertex_grams: list[ConsistencyGram],
    weights_nm: tuple[int, int] | None = None,
    floor: float = DEFAULT_FLOOR,
) -> ConicProblem:
    """Feasibility variant: the vertex blocks alone, normalized by H >= I.

    Solvability certifies a common stabilizing gain for every system
    consistent with any vertex dataset.  No gamma variable is used.
    """
    if not vertex_grams:
        raise AssemblyError("need at least one vertex Gramian")
    n, m = vertex_grams[0].n, vertex_grams[0].m
    layout = make_layout(n, m, len(vertex_grams), 0, with_gamma=False)
    blocks = robust_stabilization_blocks(vertex_grams, layout)
    blocks.append(normalization_block(layout))
    blocks += floor_blocks(layout, floor)
    return assemble(blocks, layout, "multiplier_sum")


# ---------------------------------------------------------------------------
# solutions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthesisSolution:
    """A verified certificate: H, L, gamma, multipliers and the recovered (K, P)."""

    h: np.ndarray
    l: np.ndarray
    gamma: float | None
    eps_stab: np.ndarray
    eps_perf: np.ndarray
    k: np.ndarray
    p: np.ndarray
    solver_status: str
    objective: float
    metadata: dict = field(default_factory=dict)

    def ellipsoid(self) -> EllipsoidalSet:
        if self.gamma is None:
            raise GainRecoveryError("feasibility-only solution has no gamma level")
        return EllipsoidalSet(self.p, self.gamma)


def recover_gain(h: np.ndarray, l_mat: np.ndarray, gamma: float | None = None):
    """Recover K = L H^-1 and the certificate P (gamma H^-1, or H^-1 without gamma).

    Raises:
        GainRecoveryError: H is not numerically positive definite.
    """
    h = np.asarray(h, dtype=float)
    h = (h + h.T) / 2.0
    lam_min = float(np.min(np.linalg.eigvalsh(h)))
    if lam_min <= 1e-12 * max(1.0, float(np.linalg.norm(h))):
        raise GainRecoveryError(f"H is numerically singular (min eigenvalue {lam_min:.3e})")
    h_inv = np.linalg.inv(h)
    k = np.asarray(l_mat, dtype=float) @ h_inv
    p = h_inv if gamma is None else gamma * h_inv
    p = (p + p.T) / 2.0
    return k, p
