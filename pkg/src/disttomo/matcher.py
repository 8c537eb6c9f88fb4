"""Assign a weight vector to every link from the per-path candidate sets.

Candidates from all paths are pooled and grouped into delta-classes
(``a ~ b`` iff ``|a - b| < 2 delta``).  A link shared by several paths gets
the unique class present in every path through it and absent from every
path avoiding it.  A link seen by a single path is completed from that
path's roots once the other links on the path are known.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .gh import GHModel, gh_validate
from .solver import SolutionSet
from .topology import PathLinkMatrix, columns_distinct_nonzero

WEIGHT_SUM_TOL_PIPELINE = 1e-9
IMAG_TOL = 1e-6


class NotEquivalence(ValueError):
    """The delta relation is not transitive on the pooled candidates."""


class MatchError(RuntimeError):
    pass


@dataclass(frozen=True)
class Candidate:
    path: int
    index: int  # position in that path's representative set
    value: np.ndarray


def pool_candidates(solutions: Sequence[SolutionSet]) -> list[Candidate]:
    return [
        Candidate(i, k, np.asarray(v, dtype=complex))
        for i, sol in enumerate(solutions)
        for k, v in enumerate(sol.representatives)
    ]


def _distances(values: np.ndarray) -> np.ndarray:
    diff = values[:, None, :] - values[None, :, :]
    return np.sqrt(np.sum(np.abs(diff) ** 2, axis=2))


def build_equivalence(candidates, delta: float, strict: bool = True) -> list[list[int]]:
    """Single-linkage components of ``|a - b| < 2 delta`` over the candidates.

    With ``strict`` the relation must be transitive (every component has
    diameter below ``2 delta``); otherwise ``NotEquivalence`` is raised.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    values = np.array([getattr(c, "value", c) for c in candidates], dtype=complex)
    if values.ndim == 1:
        values = values[:, None]
    n = len(values)
    if n == 0:
        return []
    dist = _distances(values)
    related = dist < 2 * delta
    label = [-1] * n
    classes: list[list[int]] = []
    for start in range(n):
        if label[start] >= 0:
            continue
        comp = [start]
        label[start] = len(classes)
        stack = [start]
        while stack:
            a = stack.pop()
            for b in np.where(related[a])[0]:
                if label[b] < 0:
                    label[b] = label[start]
                    comp.append(int(b))
                    stack.append(int(b))
        classes.append(sorted(comp))
    if strict:
        for comp in classes:
            if len(comp) > 1 and not related[np.ix_(comp, comp)].all():
                worst = dist[np.ix_(comp, comp)].max()
                raise NotEquivalence(f"class of {len(comp)} candidates spans {worst:.4g} >= 2*delta={2 * delta:.4g}")
    return classes


@dataclass
class LinkAssignment:
    link: int
    status: str  # "shared" | "completed" | "direct" | "failed"
    free: np.ndarray | None = None  # complex d-vector
    paths: list[int] = field(default_factory=list)
    members: list[tuple[int, int]] = field(default_factory=list)  # (path, representative index)
    class_id: int | None = None
    reason: str = ""
    weights: np.ndarray | None = None  # completed real (d+1)-vector
    imag_max: float = 0.0
    valid: bool = False
    violation: str = ""

    def to_json(self) -> dict:
        def cplx(v):
            return None if v is None else [[float(z.real), float(z.imag)] for z in v]

        return {
            "link": self.link,
            "status": self.status,
            "free": cplx(self.free),
            "weights": None if self.weights is None else [float(w) for w in self.weights],
            "imag_max": self.imag_max,
            "valid": self.valid,
            "violation": self.violation,
            "paths": self.paths,
            "members": [list(m) for m in self.members],
            "class_id": self.class_id,
            "reason": self.reason,
        }


@dataclass
class Refinement:
    """Joint fit of all paths' MGFs started from the matched candidates."""

    weights: np.ndarray  # N x d free weights
    cost: float
    dof: int
    origin: str  # "match" | "roots"
    n_starts: int

    def to_json(self) -> dict:
        return {"weights": self.weights.tolist(), "cost": self.cost, "dof": self.dof,
                "origin": self.origin, "n_starts": self.n_starts}

    @classmethod
    def from_json(cls, data: dict) -> "Refinement":
        return cls(np.array(data["weights"], dtype=float), data["cost"], data["dof"],
                   data["origin"], data["n_starts"])


@dataclass
class MatchReport:
    links: list[LinkAssignment]
    rates: tuple[float, ...]  # empty for exponential means
    delta: float | None
    delta_mode: str  # "auto" | "fixed" | "none"
    transitive: bool = True
    n_classes: int = 0
    error_norm: float | None = None
    algebraic_error_norm: float | None = None
    refined: Refinement | None = None

    @property
    def ok(self) -> bool:
        return all(a.status != "failed" for a in self.links)

    @property
    def usable(self) -> bool:
        """Every link has an estimate, from matching or from the joint fit."""
        return self.refined is not None or self.ok

    def estimates(self) -> np.ndarray:
        """Real parts of the assigned free weights, ``nan`` for failed links."""
        d = len(self.rates) - 1 if self.rates else 1
        out = np.full((len(self.links), d), np.nan)
        for a in self.links:
            if a.free is not None:
                out[a.link] = a.free.real
        return out

    def final_estimates(self) -> np.ndarray:
        """Refined weights when a joint fit ran, otherwise the matched ones."""
        return self.refined.weights.copy() if self.refined is not None else self.estimates()

    def to_json(self) -> dict:
        return {
            "rates": list(self.rates),
            "delta": self.delta,
            "delta_mode": self.delta_mode,
            "transitive": self.transitive,
            "n_classes": self.n_classes,
            "error_norm": self.error_norm,
            "algebraic_error_norm": self.algebraic_error_norm,
            "refined": None if self.refined is None else self.refined.to_json(),
            "links": [a.to_json() for a in self.links],
        }

    @classmethod
    def from_json(cls, data: dict) -> "MatchReport":
        links = []
        for a in data["links"]:
            free = None if a["free"] is None else np.array([complex(re, im) for re, im in a["free"]])
            links.append(LinkAssignment(
                link=a["link"], status=a["status"], free=free, paths=a["paths"],
                members=[tuple(m) for m in a["members"]], class_id=a["class_id"], reason=a["reason"],
                weights=None if a["weights"] is None else np.array(a["weights"]),
                imag_max=a["imag_max"], valid=a["valid"], violation=a["violation"],
            ))
        refined = data.get("refined")
        return cls(links, tuple(data["rates"]), data["delta"], data["delta_mode"],
                   data.get("transitive", True), data.get("n_classes", 0), data.get("error_norm"),
                   data.get("algebraic_error_norm"),
                   None if refined is None else Refinement.from_json(refined))


def _stage_one(A: PathLinkMatrix, pool: list[Candidate], classes: list[list[int]]):
    """Class-level intersection for every shared link."""
    class_paths = [{pool[c].path for c in comp} for comp in classes]
    out: dict[int, tuple[int | None, str]] = {}
    for j in A.S:
        G, B = set(A.G(j)), set(A.B(j))
        hits = [k for k, ps in enumerate(class_paths) if G <= ps and not (ps & B)]
        if len(hits) == 1:
            out[j] = (hits[0], "")
        elif not hits:
            out[j] = (None, "no class common to all paths through the link")
        else:
            out[j] = (None, f"{len(hits)} classes common to all paths through the link")
    return out


def _class_value(pool: list[Candidate], comp: list[int], paths: Sequence[int]):
    """Average of one member per path, each the member nearest the class centroid."""
    values = np.array([pool[c].value for c in comp])
    centroid = values.mean(axis=0)
    picks = []
    for p in paths:
        mine = [c for c in comp if pool[c].path == p]
        best = min(mine, key=lambda c: float(np.linalg.norm(pool[c].value - centroid)))
        picks.append(best)
    return np.mean([pool[c].value for c in picks], axis=0), [(pool[c].path, pool[c].index) for c in picks]


def _block_classes(sol: SolutionSet, path: int, cand_class: dict[tuple[int, int], int]) -> list[list[int]]:
    """Class id of every block of every root, via the nearest representative."""
    reps = sol.representatives
    out = []
    for blocks in sol.blocks():
        ids = []
        for b in blocks:
            k = int(np.argmin(np.linalg.norm(reps - b, axis=1)))
            ids.append(cand_class[(path, k)])
        out.append(ids)
    return out


def _stage_two(A, solutions, pool, classes, shared, j, tol=1e-6):
    """Complete link ``j`` (seen by one path) from that path's roots."""
    (i,) = A.G(j)
    others = [o for o in A.path(i) if o != j]
    sol = solutions[i]
    if not others:
        if len(sol.roots) != 1:
            return None, i, f"single-link path has {len(sol.roots)} roots"
        return sol.roots[0], i, ""
    needed = []
    for o in others:
        cid = shared.get(o, (None, ""))[0]
        if cid is None:
            return None, i, f"link {o} on the path is unassigned"
        needed.append(cid)
    need = Counter(needed)
    cand_class = {}
    for k, comp in enumerate(classes):
        for c in comp:
            cand_class[(pool[c].path, pool[c].index)] = k
    found: list[np.ndarray] = []
    for root_blocks, ids in zip(sol.blocks(), _block_classes(sol, i, cand_class)):
        for pos in range(len(ids)):
            rest = Counter(ids[:pos] + ids[pos + 1:])
            if rest == need:
                alpha = root_blocks[pos]
                if not any(np.linalg.norm(alpha - f) <= tol * (1 + np.linalg.norm(f)) for f in found):
                    found.append(alpha)
    if len(found) == 1:
        return found[0], i, ""
    if not found:
        return None, i, "no root completes the assigned links on the path"
    return None, i, f"{len(found)} distinct completions"


def _complete(assign: LinkAssignment, rates: Sequence[float] | None) -> None:
    """Fill in the last weight and validate; with ``rates=None`` the values are means."""
    free = assign.free
    assign.imag_max = float(np.max(np.abs(free.imag))) if len(free) else 0.0
    real = free.real
    if rates is None:
        assign.weights = real.copy()
        v = None if np.all(real > 0) else f"non-positive mean {real.min():.4g}"
    else:
        assign.weights = np.append(real, 1.0 - math.fsum(real))
        v = gh_validate(GHModel(tuple(rates), tuple(assign.weights)), WEIGHT_SUM_TOL_PIPELINE)
    if assign.imag_max > IMAG_TOL:
        v_msg = f"imaginary part {assign.imag_max:.3g}"
        assign.violation = v_msg if v is None else f"{v_msg}; {v}"
        assign.valid = False
    else:
        assign.valid = v is None
        assign.violation = "" if v is None else str(v)


def _assign(A, solutions, pool, classes, rates) -> list[LinkAssignment]:
    shared = _stage_one(A, pool, classes)
    links: list[LinkAssignment] = []
    for j in range(A.N):
        if j in shared:
            cid, reason = shared[j]
            if cid is None:
                links.append(LinkAssignment(j, "failed", paths=list(A.G(j)), reason=reason))
                continue
            value, members = _class_value(pool, classes[cid], A.G(j))
            links.append(LinkAssignment(j, "shared", value, list(A.G(j)), members, cid))
        else:
            alpha, i, reason = _stage_two(A, solutions, pool, classes, shared, j)
            if alpha is None:
                links.append(LinkAssignment(j, "failed", paths=[i], reason=reason))
                continue
            status = "direct" if len(A.path(i)) == 1 else "completed"
            links.append(LinkAssignment(j, status, np.asarray(alpha, dtype=complex), [i]))
    for a in links:
        if a.free is not None:
            _complete(a, rates)
    return links


def _delta_candidates(pool: list[Candidate], limit: int = 400) -> list[float]:
    if len(pool) < 2:
        return []
    values = np.array([c.value for c in pool])
    paths = np.array([c.path for c in pool])
    dist = _distances(values)
    cross = dist[np.triu(paths[:, None] != paths[None, :], 1)]
    cross = np.unique(cross[np.isfinite(cross) & (cross > 0)])
    # delta just large enough that the pair at distance c becomes related
    return [float(c) / 2 * (1 + 1e-9) for c in cross[:limit]]


def match_links(
    A: PathLinkMatrix,
    solutions: Sequence[SolutionSet],
    rates: Sequence[float] | None,
    delta: float | None = None,
    max_halvings: int = 30,
) -> MatchReport:
    """Run both matching stages.

    With ``delta`` given, the relation is built at that value and halved
    while it fails to be transitive.  Without it, the smallest delta at
    which the relation is transitive and every link is assigned is used;
    if none exists, the smallest delta assigning every link under the
    single-linkage closure is used and the report is marked non-transitive.
    """
    if not columns_distinct_nonzero(A):
        raise MatchError("topology is not 1-identifiable")
    if len(solutions) != A.m:
        raise MatchError(f"{len(solutions)} solution sets for {A.m} paths")
    complete_rates = None if rates is None else tuple(float(r) for r in rates)
    rates = complete_rates or ()
    pool = pool_candidates(solutions)
    if not A.S:
        classes = [[k] for k in range(len(pool))]
        links = _assign(A, solutions, pool, classes, complete_rates)
        return MatchReport(links, rates, None, "none", True, len(classes))
    if delta is not None:
        d = float(delta)
        for _ in range(max_halvings + 1):
            try:
                classes = build_equivalence(pool, d, strict=True)
                break
            except NotEquivalence:
                d /= 2
        else:
            raise MatchError(f"relation not transitive down to delta={d:.3g}")
        links = _assign(A, solutions, pool, classes, complete_rates)
        return MatchReport(links, rates, d, "fixed", True, len(classes))

    best = None
    candidates = _delta_candidates(pool)
    for strict in (True, False):
        for d in candidates:
            try:
                classes = build_equivalence(pool, d, strict=strict)
            except NotEquivalence:
                continue
            links = _assign(A, solutions, pool, classes, complete_rates)
            n_ok = sum(a.status != "failed" for a in links)
            if best is None or n_ok > best[0]:
                best = (n_ok, links, d, strict, len(classes))
            if n_ok == A.N:
                return MatchReport(links, rates, d, "auto", strict, len(classes))
    if best is None:
        classes = [[k] for k in range(len(pool))]
        links = _assign(A, solutions, pool, classes, complete_rates)
        return MatchReport(links, rates, None, "auto", True, len(classes))
    _, links, d, strict, n_classes = best
    return MatchReport(links, rates, d, "auto", strict, n_classes)


def error_norm(report: MatchReport, truth, algebraic: bool = False) -> float:
    """Euclidean norm of the stacked free-weight errors; ``inf`` if a link failed.

    Uses the refined weights when present unless ``algebraic`` is set.
    """
    truth = np.asarray(truth, dtype=float)
    est = report.estimates() if algebraic else report.final_estimates()
    if truth.ndim == 1 and truth.size == est.size:
        truth = truth.reshape(est.shape)
    if truth.shape != est.shape:
        raise ValueError(f"truth shape {truth.shape} does not match estimates {est.shape}")
    if np.any(np.isnan(est)):
        return math.inf
    return float(np.linalg.norm((est - truth).ravel()))


def format_table(report: MatchReport, truth=None, digits: int = 4) -> str:
    """Aligned text table of actual and estimated weights per link."""
    means = not report.rates
    d1 = 1 if means else len(report.rates)
    width = digits + 4
    est_cols = ["m^"] if means else [f"w{k + 1}^" for k in range(d1)]
    act_cols = ["m"] if means else [f"w{k + 1}" for k in range(d1)]
    head = ["Link"]
    if truth is not None:
        head += act_cols
    head += est_cols + ["status"]
    lines = ["  ".join(h.rjust(width) if h not in ("Link", "status") else h.ljust(6) for h in head)]
    truth_full = None
    if truth is not None:
        truth = np.asarray(truth, dtype=float)
        truth = truth.reshape(len(report.links), -1)
        truth_full = truth if means else np.hstack([truth, 1.0 - truth.sum(axis=1, keepdims=True)])
    invalid = False
    for a in report.links:
        row = [str(a.link + 1).ljust(6)]
        if truth_full is not None:
            row += [f"{w:.{digits}f}".rjust(width) for w in truth_full[a.link]]
        if report.refined is not None:
            free = report.refined.weights[a.link]
            full = (*free, 1.0 - math.fsum(free))
            row += [f"{w:.{digits}f}".rjust(width) for w in full]
            ok = gh_validate(GHModel(tuple(report.rates), full), WEIGHT_SUM_TOL_PIPELINE) is None
            flag = f"fit{'' if ok else '*'} ({a.status})"
        else:
            if a.weights is not None:
                row += [f"{w:.{digits}f}".rjust(width) for w in a.weights]
            else:
                row += ["-".rjust(width)] * d1
            ok = a.valid or a.status == "failed"
            flag = a.status if ok else f"{a.status}*"
        invalid |= not ok
        row.append(flag)
        lines.append("  ".join(row))
    tail = ["exponential means"] if means else [f"rates: {', '.join(f'{r:g}' for r in report.rates)}"]
    if report.delta is not None:
        tail.append(f"delta: {report.delta:.4g} ({report.delta_mode}{'' if report.transitive else ', non-transitive'})")
    if report.refined is not None:
        r = report.refined
        tail.append(f"joint fit: cost {2 * r.cost:.1f} on {r.dof} dof, {r.origin} start of {r.n_starts}")
    if truth is not None:
        if report.refined is not None:
            tail.append(f"matched error norm: {error_norm(report, truth, algebraic=True):.4f}")
        tail.append(f"error norm: {error_norm(report, truth):.4f}")
    if invalid:
        tail.append("* assigned values fail validation")
    return "\n".join(lines + tail) + "\n"
