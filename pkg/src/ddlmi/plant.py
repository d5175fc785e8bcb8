"""Plant simulation: vertex hulls, scheduled parameter traces, offline experiments."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import SystemPair, TrajectoryDataset, dataset_from_matrices
from .lmi import CostWeights

__all__ = [
    "SAMPLING_PERIOD",
    "PlantError",
    "DeltaSchedule",
    "PlantModel",
    "BenchmarkPlant",
    "vertex_system",
    "benchmark_vertices",
    "delta_to_weights",
    "step_plant",
    "generate_offline_data",
    "true_cost",
    "step_of_time",
]

SAMPLING_PERIOD = 0.1  # seconds per step; the discretization built into the A matrix

HULL_TOL = 1e-9


class PlantError(ValueError):
    """Raised on invalid schedules, mixer weights, or trajectory requests."""


def step_of_time(t_seconds: float) -> int:
    """Map a wall-clock instant to the simulation step index."""
    return int(round(t_seconds / SAMPLING_PERIOD))


@dataclass(frozen=True)
class DeltaSchedule:
    """Piecewise-constant parameter trace given as (step, value) breakpoints."""

    breakpoints: tuple

    def __post_init__(self):
        bps = tuple((int(k), float(v)) for k, v in self.breakpoints)
        if not bps:
            raise PlantError("schedule needs at least one breakpoint")
        if bps[0][0] != 0:
            raise PlantError("first breakpoint must be at step 0")
        steps = [k for k, _ in bps]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise PlantError("breakpoint steps must be strictly increasing")
        object.__setattr__(self, "breakpoints", bps)

    @staticmethod
    def constant(value: float) -> "DeltaSchedule":
        return DeltaSchedule(((0, value),))

    def value(self, k: int) -> float:
        out = self.breakpoints[0][1]
        for step, v in self.breakpoints:
            if k >= step:
                out = v
        return out


class PlantModel:
    """Time-varying plant realized as a per-step convex combination of vertices."""

    def __init__(self, vertices, mixer, x0):
        self.vertices = tuple(vertices)
        self.mixer = mixer
        self.x = np.asarray(x0, dtype=float).ravel().copy()
        self.k = 0
        n, m = self.vertices[0].n, self.vertices[0].m
        for v in self.vertices:
            if (v.n, v.m) != (n, m):
                raise PlantError("vertex dimensions disagree")

    def realized(self) -> SystemPair:
        lam = np.asarray(self.mixer(self.k), dtype=float).ravel()
        if lam.size != len(self.vertices):
            raise PlantError(f"mixer returned {lam.size} weights for {len(self.vertices)} vertices")
        if np.min(lam) < -HULL_TOL or abs(float(np.sum(lam)) - 1.0) > HULL_TOL:
            raise PlantError(f"mixer weights {lam} are not convex at step {self.k}")
        a = sum(w * v.a for w, v in zip(lam, self.vertices))
        b = sum(w * v.b for w, v in zip(lam, self.vertices))
        return SystemPair(a, b)

    def step(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float).ravel()
        sys_k = self.realized()
        self.x = sys_k.a @ self.x + sys_k.b @ u
        self.k += 1
        return self.x.copy()


def vertex_system(delta: float, kappa: float = 7.87) -> SystemPair:
    """The sampled servo model: A = [[1, 0.1], [0, 1 - 0.1*delta]], B = [[0], [0.1*kappa]]."""
    a = np.array([[1.0, 0.1], [0.0, 1.0 - 0.1 * delta]])
    b = np.array([[0.0], [0.1 * kappa]])
    return SystemPair(a, b)


def benchmark_vertices(kappa: float = 7.87, deltas=(0.1, 10.0)) -> list[SystemPair]:
    return [vertex_system(d, kappa) for d in deltas]


def delta_to_weights(delta: float, lo: float = 0.1, hi: float = 10.0):
    """Affine weights placing A(delta) in the two-vertex hull; flags out-of-range values."""
    lam = np.array([(hi - delta) / (hi - lo), (delta - lo) / (hi - lo)])
    in_hull = bool(np.min(lam) >= -HULL_TOL)
    return lam, in_hull


class BenchmarkPlant:
    """Servo plant driven directly by a scheduled friction parameter."""

    def __init__(self, kappa: float, schedule: DeltaSchedule, x0):
        self.kappa = float(kappa)
        self.schedule = schedule
        self.x = np.asarray(x0, dtype=float).ravel().copy()
        self.k = 0

    def realized(self) -> SystemPair:
        return vertex_system(self.schedule.value(self.k), self.kappa)

    def step(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float).ravel()
        sys_k = self.realized()
        self.x = sys_k.a @ self.x + sys_k.b @ u
        self.k += 1
        return self.x.copy()


def step_plant(plant, u) -> np.ndarray:
    """Advance any plant one step under input u and return the new state."""
    return plant.step(u)


def generate_offline_data(
    vertex: SystemPair, t: int, x0, input_range=(-1.0, 1.0), rng=None, label: str = ""
) -> TrajectoryDataset:
    """Roll a vertex system for t steps under uniform random inputs.

    Pass a seeded numpy Generator for reproducibility; identical generators
    produce bit-identical datasets.
    """
    if t < 1:
        raise PlantError(f"experiment length must be >= 1, got {t}")
    rng = rng if rng is not None else np.random.default_rng(0)
    lo, hi = input_range
    xs = [np.asarray(x0, dtype=float).ravel().copy()]
    us = []
    for _ in range(t):
        u = rng.uniform(lo, hi, size=vertex.m)
        us.append(u)
        xs.append(vertex.a @ xs[-1] + vertex.b @ u)
    return dataset_from_matrices(
        np.column_stack(xs[:-1]), np.column_stack(us), np.column_stack(xs[1:]), label
    )


def true_cost(trajectory, weights: CostWeights, t_e: int) -> float:
    """Quadratic running cost sum_{k=0..t_e} x'Qx + u'Ru over a (x, u) list."""
    if len(trajectory) < t_e + 1:
        raise PlantError(f"trajectory has {len(trajectory)} samples, need {t_e + 1}")
    total = 0.0
    for x, u in trajectory[: t_e + 1]:
        x = np.asarray(x, dtype=float).ravel()
        u = np.asarray(u, dtype=float).ravel()
        total += float(x @ weights.q @ x + u @ weights.r @ u)
    return total
