"""SDPA sparse (``.dat-s``) serialization of assembled problems.

File layout
-----------

::

    mDIM                      number of scalar variables
    nBLOCK                    number of inequality blocks
    bLOCKsTRUCT               block sizes, space separated
    c1 c2 ... cmDIM           objective vector
    matno blk i j value       one nonzero per line

The file encodes ``sum_i x_i F_i - F_0 >= 0`` per block, so a problem block
``const + sum_i x_i coeff_i >= 0`` is written with ``F_0 = -const`` and
``F_i = coeff_i``.  Entries are 1-based, upper-triangular (``i <= j``),
sorted by (matno, blk, i, j), with values printed by ``repr`` so that
export, parse, re-export is byte-identical.
"""
from __future__ import annotations

from dataclasses import dataclass

from .lmi import ConicProblem

__all__ = ["SdpaData", "SdpaFormatError", "export_sdpa", "parse_sdpa", "problem_to_sdpa"]


class SdpaFormatError(ValueError):
    """Raised on malformed .dat-s content."""


@dataclass(frozen=True)
class SdpaData:
    """Neutral carrier of one .dat-s file: header plus sorted nonzero entries."""

    nvar: int
    block_sizes: tuple
    c: tuple
    entries: tuple  # (matno, blk, i, j, value), 1-based, i <= j


def _matrix_entries(mat, matno: int, blk: int):
    d = mat.shape[0]
    for i in range(d):
        for j in range(i, d):
            v = float(mat[i, j])
            if v != 0.0:
                yield (matno, blk, i + 1, j + 1, v)


def problem_to_sdpa(problem: ConicProblem) -> SdpaData:
    """Flatten a ConicProblem into header data plus sorted coefficient entries."""
    entries = []
    for bi, blk in enumerate(problem.blocks, start=1):
        entries.extend(_matrix_entries(-blk.const, 0, bi))
        for idx, coeff in blk.coeffs:
            entries.extend(_matrix_entries(coeff, idx + 1, bi))
    entries.sort(key=lambda e: e[:4])
    return SdpaData(
        nvar=problem.nvar,
        block_sizes=tuple(blk.size for blk in problem.blocks),
        c=tuple(float(v) for v in problem.objective),
        entries=tuple(entries),
    )


def export_sdpa(problem) -> str:
    """Render a ConicProblem (or already-flattened SdpaData) as .dat-s text."""
    data = problem if isinstance(problem, SdpaData) else problem_to_sdpa(problem)
    lines = [
        str(data.nvar),
        str(len(data.block_sizes)),
        " ".join(str(s) for s in data.block_sizes),
        " ".join(repr(v) for v in data.c),
    ]
    for matno, blk, i, j, v in data.entries:
        lines.append(f"{matno} {blk} {i} {j} {repr(v)}")
    return "\n".join(lines) + "\n"


def parse_sdpa(text: str) -> SdpaData:
    """Parse .dat-s text; tolerates blank lines and '*' or '"' comment lines."""
    rows = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line[0] in "*\"":
            continue
        rows.append(line)
    if len(rows) < 4:
        raise SdpaFormatError("file too short: need 4 header lines")
    try:
        nvar = int(rows[0].split()[0])
        nblock = int(rows[1].split()[0])
        sizes = tuple(abs(int(tok.strip("(),{}"))) for tok in rows[2].replace(",", " ").split())
        c = tuple(float(tok) for tok in rows[3].replace(",", " ").split())
    except ValueError as exc:
        raise SdpaFormatError(f"malformed header: {exc}") from exc
    if len(sizes) != nblock:
        raise SdpaFormatError(f"block structure lists {len(sizes)} sizes, expected {nblock}")
    if len(c) != nvar:
        raise SdpaFormatError(f"objective has {len(c)} entries, expected {nvar}")
    entries = []
    for line in rows[4:]:
        toks = line.replace(",", " ").split()
        if len(toks) != 5:
            raise SdpaFormatError(f"malformed entry line: {line!r}")
        matno, blk, i, j = (int(t) for t in toks[:4])
        v = float(toks[4])
        if not 0 <= matno <= nvar:
            raise SdpaFormatError(f"matrix number {matno} out of range")
        if not 1 <= blk <= nblock:
            raise SdpaFormatError(f"block number {blk} out of range")
        if i > j:
            i, j = j, i
        if not (1 <= i <= j <= sizes[blk - 1]):
            raise SdpaFormatError(f"entry ({i},{j}) outside block {blk} of size {sizes[blk - 1]}")
        if v != 0.0:
            entries.append((matno, blk, i, j, v))
    entries.sort(key=lambda e: e[:4])
    return SdpaData(nvar, sizes, c, tuple(entries))
