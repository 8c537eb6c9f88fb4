"""Path-link routing matrices and identifiability.

Links and paths are 0-based throughout the API and on disk.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Sequence


def bareiss_rank(rows: Sequence[Sequence[int]]) -> int:
    """Rank of an integer matrix by fraction-free elimination."""
    M = [list(map(int, r)) for r in rows]
    if not M or not M[0]:
        return 0
    n_rows, n_cols = len(M), len(M[0])
    rank = 0
    prev = 1
    for col in range(n_cols):
        pivot = next((r for r in range(rank, n_rows) if M[r][col] != 0), None)
        if pivot is None:
            continue
        M[rank], M[pivot] = M[pivot], M[rank]
        for r in range(rank + 1, n_rows):
            for c in range(col + 1, n_cols):
                # exact division is guaranteed by Sylvester's identity
                M[r][c] = (M[r][c] * M[rank][col] - M[r][col] * M[rank][c]) // prev
            M[r][col] = 0
        prev = M[rank][col]
        rank += 1
        if rank == n_rows:
            break
    return rank


@dataclass(frozen=True)
class PathLinkMatrix:
    """Binary ``m x N`` matrix; row ``i`` marks the links on path ``i``."""

    entries: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        rows = tuple(tuple(int(a) for a in r) for r in self.entries)
        if not rows:
            raise ValueError("path-link matrix needs at least one path")
        width = len(rows[0])
        if width == 0:
            raise ValueError("path-link matrix needs at least one link")
        for i, r in enumerate(rows):
            if len(r) != width:
                raise ValueError(f"row {i} has {len(r)} entries, expected {width}")
            if any(a not in (0, 1) for a in r):
                raise ValueError(f"row {i} is not binary: {r}")
            if not any(r):
                raise ValueError(f"path {i} traverses no links")
        object.__setattr__(self, "entries", rows)

    @classmethod
    def from_paths(cls, paths: Sequence[Sequence[int]], num_links: int) -> "PathLinkMatrix":
        rows = []
        for i, p in enumerate(paths):
            row = [0] * num_links
            for j in p:
                if not 0 <= int(j) < num_links:
                    raise ValueError(f"path {i} lists link {j} outside 0..{num_links - 1}")
                row[int(j)] = 1
            rows.append(row)
        return cls(tuple(map(tuple, rows)))

    @property
    def m(self) -> int:
        return len(self.entries)

    @property
    def N(self) -> int:
        return len(self.entries[0])

    def path(self, i: int) -> tuple[int, ...]:
        """Links traversed by path ``i`` (``p_i``)."""
        return tuple(j for j, a in enumerate(self.entries[i]) if a)

    @property
    def paths(self) -> list[tuple[int, ...]]:
        return [self.path(i) for i in range(self.m)]

    def G(self, j: int) -> tuple[int, ...]:
        """Paths through link ``j``."""
        return tuple(i for i in range(self.m) if self.entries[i][j])

    def B(self, j: int) -> tuple[int, ...]:
        """Paths avoiding link ``j``."""
        return tuple(i for i in range(self.m) if not self.entries[i][j])

    @property
    def S(self) -> tuple[int, ...]:
        """Links shared by at least two paths."""
        return tuple(j for j in range(self.N) if len(self.G(j)) >= 2)

    def column(self, j: int) -> tuple[int, ...]:
        return tuple(r[j] for r in self.entries)

    def to_json(self) -> dict:
        return {"paths": [list(p) for p in self.paths], "num_links": self.N}

    @classmethod
    def from_json(cls, data: dict) -> "PathLinkMatrix":
        return cls.from_paths(data["paths"], int(data["num_links"]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(self.entries)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "PathLinkMatrix":
        rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
        return cls(tuple(tuple(int(c) for c in r) for r in rows))

    @classmethod
    def load(cls, path: str | Path) -> "PathLinkMatrix":
        path = Path(path)
        text = path.read_text()
        if path.suffix.lower() == ".csv":
            return cls.from_csv(text)
        return cls.from_json(json.loads(text))


def is_k_identifiable(A: PathLinkMatrix, k: int) -> bool:
    """True iff every ``2k`` columns of ``A`` are linearly independent."""
    if k < 1:
        raise ValueError("k must be a positive integer")
    cols = [A.column(j) for j in range(A.N)]
    if A.N < 2 * k:
        return bareiss_rank(list(zip(*cols))) == A.N
    if 2 * k > A.m:
        return False
    for subset in combinations(range(A.N), 2 * k):
        sub = [[A.entries[i][j] for j in subset] for i in range(A.m)]
        if bareiss_rank(sub) < 2 * k:
            return False
    return True


def columns_distinct_nonzero(A: PathLinkMatrix) -> bool:
    """Combinatorial form of 1-identifiability for binary matrices."""
    cols = [A.column(j) for j in range(A.N)]
    return all(any(c) for c in cols) and len(set(cols)) == len(cols)


def link_intersection_identity(A: PathLinkMatrix, j: int) -> frozenset[int]:
    """Links on every path through ``j`` and on no path avoiding it."""
    if not 0 <= j < A.N:
        raise ValueError(f"link {j} outside 0..{A.N - 1}")
    out = set(range(A.N))
    for g in A.G(j):
        out &= set(A.path(g))
    for b in A.B(j):
        out -= set(A.path(b))
    return frozenset(out)
