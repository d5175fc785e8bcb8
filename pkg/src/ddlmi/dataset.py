"""Trajectory datasets, rolling windows, and data Gramians.

A dataset is a batch of (state, input, successor) triplets collected from an
unknown linear system x+ = A x + B u.  The set of (A, B) pairs consistent
with a dataset is encoded by the Gramian of the stacked data matrix
S = [X+; -X-; -U-]; everything downstream (synthesis, identification,
informativity checks) is computed from these two objects.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "DatasetError",
    "SystemPair",
    "TrajectoryDataset",
    "RollingWindow",
    "ConsistencyGram",
    "InformativityReport",
    "build_dataset",
    "dataset_from_matrices",
    "push_sample",
    "consistency_gram",
    "consistency_residual",
    "informativity_for_identification",
    "identify_system",
    "least_squares_fit",
    "write_dataset_csv",
    "read_dataset_csv",
    "write_manifest",
    "read_manifest",
]

RANK_TOL = 1e-8


class DatasetError(ValueError):
    """Raised when dataset shapes or contents are invalid."""


@dataclass(frozen=True)
class SystemPair:
    """A state-space pair (A, B) with x+ = A x + B u."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        if a.shape[0] != a.shape[1]:
            raise DatasetError(f"A must be square, got {a.shape}")
        if b.shape[0] != a.shape[0]:
            raise DatasetError(f"B rows {b.shape[0]} must match A size {a.shape[0]}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[1]


@dataclass(frozen=True)
class TrajectoryDataset:
    """A sample batch: column j satisfies x_plus[:, j] = A x_minus[:, j] + B u_minus[:, j].

    Columns are ordered oldest to newest.

    Attributes:
        x_minus: states, n x T
        u_minus: inputs, m x T
        x_plus: successor states, n x T
        label: free-form source tag (vertex name, window id, ...)
    """

    x_minus: np.ndarray
    u_minus: np.ndarray
    x_plus: np.ndarray
    label: str = ""

    @property
    def n(self) -> int:
        return self.x_minus.shape[0]

    @property
    def m(self) -> int:
        return self.u_minus.shape[0]

    @property
    def samples(self) -> int:
        return self.x_minus.shape[1]


def dataset_from_matrices(x_minus, u_minus, x_plus, label: str = "") -> TrajectoryDataset:
    """Validate and assemble a TrajectoryDataset from stacked n x T / m x T arrays."""
    x_minus = np.atleast_2d(np.asarray(x_minus, dtype=float))
    u_minus = np.atleast_2d(np.asarray(u_minus, dtype=float))
    x_plus = np.atleast_2d(np.asarray(x_plus, dtype=float))
    if x_minus.shape != x_plus.shape:
        raise DatasetError(
            f"state/successor shape mismatch: {x_minus.shape} vs {x_plus.shape}"
        )
    if u_minus.shape[1] != x_minus.shape[1]:
        raise DatasetError(
            f"sample count mismatch: {u_minus.shape[1]} inputs vs {x_minus.shape[1]} states"
        )
    if x_minus.shape[1] == 0:
        raise DatasetError("dataset must contain at least one sample")
    for name, arr in (("x_minus", x_minus), ("u_minus", u_minus), ("x_plus", x_plus)):
        if not np.all(np.isfinite(arr)):
            raise DatasetError(f"non-finite entries in {name}")
    return TrajectoryDataset(x_minus, u_minus, x_plus, label)


def build_dataset(triplets, label: str = "") -> TrajectoryDataset:
    """Assemble a dataset from an ordered list of (x_prev, u_prev, x_next) triplets.

    Args:
        triplets: nonempty sequence of (x, u, x_next) with consistent dimensions.
        label: optional source tag.

    Raises:
        DatasetError: empty list, or a dimension mismatch (the error names the
            index of the offending triplet).
    """
    triplets = list(triplets)
    if not triplets:
        raise DatasetError("triplet list is empty")
    xs, us, xps = [], [], []
    n = m = None
    for idx, item in enumerate(triplets):
        try:
            x, u, x_next = item
        except (TypeError, ValueError) as exc:
            raise DatasetError(f"triplet {idx} is not a (x, u, x_next) triple") from exc
        x = np.asarray(x, dtype=float).ravel()
        u = np.asarray(u, dtype=float).ravel()
        x_next = np.asarray(x_next, dtype=float).ravel()
        if n is None:
            n, m = x.size, u.size
        if x.size != n or u.size != m or x_next.size != n:
            raise DatasetError(
                f"triplet {idx} has dims (x={x.size}, u={u.size}, x_next={x_next.size}),"
                f" expected (x={n}, u={m}, x_next={n})"
            )
        xs.append(x)
        us.append(u)
        xps.append(x_next)
    return dataset_from_matrices(
        np.column_stack(xs), np.column_stack(us), np.column_stack(xps), label
    )


@dataclass(frozen=True)
class RollingWindow:
    """Fixed-capacity FIFO of samples; pushing at capacity evicts the oldest.

    An empty window has n x 0 arrays.  `as_dataset` is only valid once at
    least one sample has been pushed.
    """

    capacity: int
    x_minus: np.ndarray
    u_minus: np.ndarray
    x_plus: np.ndarray

    @staticmethod
    def empty(capacity: int, n: int, m: int) -> "RollingWindow":
        if capacity < 1:
            raise DatasetError(f"window capacity must be >= 1, got {capacity}")
        return RollingWindow(
            capacity,
            np.zeros((n, 0)),
            np.zeros((m, 0)),
            np.zeros((n, 0)),
        )

    def __len__(self) -> int:
        return self.x_minus.shape[1]

    @property
    def n(self) -> int:
        return self.x_minus.shape[0]

    @property
    def m(self) -> int:
        return self.u_minus.shape[0]

    @property
    def full(self) -> bool:
        return len(self) == self.capacity

    def as_dataset(self, label: str = "window") -> TrajectoryDataset:
        return dataset_from_matrices(self.x_minus, self.u_minus, self.x_plus, label)


def push_sample(window: RollingWindow, x, u, x_next) -> RollingWindow:
    """Append one (x, u, x+) triplet, evicting the oldest sample at capacity."""
    x = np.asarray(x, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    x_next = np.asarray(x_next, dtype=float).ravel()
    if x.size != window.n or u.size != window.m or x_next.size != window.n:
        raise DatasetError(
            f"sample dims (x={x.size}, u={u.size}, x_next={x_next.size}) do not match"
            f" window dims (n={window.n}, m={window.m})"
        )
    xm = np.hstack([window.x_minus, x[:, None]])
    um = np.hstack([window.u_minus, u[:, None]])
    xp = np.hstack([window.x_plus, x_next[:, None]])
    if xm.shape[1] > window.capacity:
        xm, um, xp = xm[:, 1:], um[:, 1:], xp[:, 1:]
    return RollingWindow(window.capacity, xm, um, xp)


@dataclass(frozen=True)
class ConsistencyGram:
    """Gramian N = -S S' of the stacked data S = [X+; -X-; -U-].

    N is (2n+m) x (2n+m), symmetric, negative semidefinite.  For any system
    (A, B) the squared fit error satisfies
    ||X+ - A X- - B U-||_F^2 = -trace([I A B] N [I A B]').
    """

    matrix: np.ndarray
    n: int
    m: int
    samples: int
    stack_rank: int
    label: str = ""

    @property
    def size(self) -> int:
        return 2 * self.n + self.m


def consistency_gram(data: TrajectoryDataset, rank_tol: float = RANK_TOL) -> ConsistencyGram:
    """Compute the data Gramian N = -S S' for a dataset."""
    s = np.vstack([data.x_plus, -data.x_minus, -data.u_minus])
    n_mat = -s @ s.T
    n_mat = (n_mat + n_mat.T) / 2.0
    svals = np.linalg.svd(s, compute_uv=False)
    rank = 0
    if svals.size and svals[0] > 0.0:
        rank = int(np.sum(svals > rank_tol * svals[0]))
    return ConsistencyGram(n_mat, data.n, data.m, data.samples, rank, data.label)


def consistency_residual(data: TrajectoryDataset, system: SystemPair) -> float:
    """Frobenius norm of X+ - A X- - B U- for a candidate system."""
    if system.n != data.n or system.m != data.m:
        raise DatasetError(
            f"system dims ({system.n},{system.m}) do not match data ({data.n},{data.m})"
        )
    return float(
        np.linalg.norm(data.x_plus - system.a @ data.x_minus - system.b @ data.u_minus)
    )


@dataclass(frozen=True)
class InformativityReport:
    """Rank verdict for identification: the regressor [X-; U-] must have rank n+m."""

    identifiable: bool
    rank: int
    required: int

    def __bool__(self) -> bool:
        return self.identifiable


def _regressor_rank(data: TrajectoryDataset, rank_tol: float) -> int:
    z = np.vstack([data.x_minus, data.u_minus])
    svals = np.linalg.svd(z, compute_uv=False)
    if svals.size == 0 or svals[0] == 0.0:
        return 0
    return int(np.sum(svals > rank_tol * svals[0]))


def informativity_for_identification(
    data: TrajectoryDataset, rank_tol: float = RANK_TOL
) -> InformativityReport:
    """Check whether exactly one system explains the data.

    A singular value counts toward the rank iff it exceeds rank_tol times the
    largest singular value.
    """
    rank = _regressor_rank(data, rank_tol)
    required = data.n + data.m
    return InformativityReport(rank == required, rank, required)


def least_squares_fit(data: TrajectoryDataset) -> tuple[SystemPair, float]:
    """Minimum-norm least-squares fit of (A, B) to the data.

    Returns the fitted pair and the residual ||X+ - A X- - B U-||_F.  The
    residual is meaningful even when the data does not pin down a unique
    system: it is zero exactly when some system explains every sample.
    """
    z = np.vstack([data.x_minus, data.u_minus])  # (n+m) x T
    sol, _, _, _ = np.linalg.lstsq(z.T, data.x_plus.T, rcond=None)
    ab = sol.T  # n x (n+m)
    fitted = SystemPair(ab[:, : data.n], ab[:, data.n:])
    return fitted, consistency_residual(data, fitted)


def identify_system(data: TrajectoryDataset, rank_tol: float = RANK_TOL) -> SystemPair:
    """Recover the unique (A, B) explaining an identifiable dataset.

    Raises:
        DatasetError: if the dataset is not informative for identification;
            callers holding such data should work with the consistency
            Gramian directly instead of a point estimate.
    """
    report = informativity_for_identification(data, rank_tol)
    if not report:
        raise DatasetError(
            f"dataset with {data.samples} samples has regressor rank {report.rank}"
            f" < n + m = {report.required}; no unique system exists, use the"
            " consistency Gramian instead"
        )
    fitted, _ = least_squares_fit(data)
    return fitted


# ---------------------------------------------------------------------------
# file interchange: CSV per dataset + JSON manifest
# ---------------------------------------------------------------------------


def _csv_header(n: int, m: int) -> list[str]:
    cols = ["k"]
    cols += [f"x{i + 1}" for i in range(n)]
    cols += [f"u{i + 1}" for i in range(m)]
    cols += [f"xnext{i + 1}" for i in range(n)]
    return cols


def write_dataset_csv(data: TrajectoryDataset, path) -> None:
    """Write one triplet per row with header k,x1..xn,u1..um,xnext1..xnextn."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_csv_header(data.n, data.m))
        for j in range(data.samples):
            row = [j]
            row += [repr(float(v)) for v in data.x_minus[:, j]]
            row += [repr(float(v)) for v in data.u_minus[:, j]]
            row += [repr(float(v)) for v in data.x_plus[:, j]]
            writer.writerow(row)


def read_dataset_csv(path, n: int, m: int, label: str = "") -> TrajectoryDataset:
    """Read a dataset CSV written by `write_dataset_csv` (header validated)."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != _csv_header(n, m):
            raise DatasetError(
                f"unexpected CSV header in {path}: {header!r} (for n={n}, m={m})"
            )
        xs, us, xps = [], [], []
        for row in reader:
            if not row:
                continue
            vals = [float(v) for v in row[1:]]
            if len(vals) != 2 * n + m:
                raise DatasetError(f"malformed row in {path}: {row!r}")
            xs.append(vals[:n])
            us.append(vals[n : n + m])
            xps.append(vals[n + m :])
    if not xs:
        raise DatasetError(f"no samples in {path}")
    return dataset_from_matrices(
        np.array(xs).T, np.array(us).T, np.array(xps).T, label or path.stem
    )


def write_manifest(path, n: int, m: int, dataset_files: list[str]) -> None:
    """Write a JSON manifest pointing at vertex dataset CSV files."""
    payload = {"n": int(n), "m": int(m), "datasets": list(dataset_files)}
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def read_manifest(path) -> list[TrajectoryDataset]:
    """Load every dataset referenced by a manifest (paths relative to it)."""
    path = Path(path)
    payload = json.loads(path.read_text())
    try:
        n, m = int(payload["n"]), int(payload["m"])
        files = payload["datasets"]
    except (KeyError, TypeError) as exc:
        raise DatasetError(f"malformed manifest {path}: {exc}") from exc
    out = []
    for rel in files:
        fpath = Path(rel)
        if not fpath.is_absolute():
            fpath = path.parent / fpath
        out.append(read_dataset_csv(fpath, n, m))
    if not out:
        raise DatasetError(f"manifest {path} lists no datasets")
    return out
