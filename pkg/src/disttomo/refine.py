"""Joint weighted least-squares refinement of matched link weights.

The algebraic phase decides which weight vector belongs to which link.
Its estimates are then polished by fitting every path's empirical MGF on
a grid of ``t`` values at once, weighting residuals by the sample
covariance of ``exp(-t Y)``.  Links shared between paths are informed by
all of them, which removes the directions a single path cannot resolve.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import least_squares

from .matcher import Refinement
from .topology import PathLinkMatrix

DEFAULT_POINTS = 16
EIG_REL_TOL = 1e-12


@dataclass
class PathStatistics:
    tau: np.ndarray
    mean: np.ndarray  # empirical MGF on tau
    cov: np.ndarray  # covariance of exp(-t Y) across tau
    L: int


def statistics_grid(rates: Sequence[float], points: int = DEFAULT_POINTS) -> np.ndarray:
    lam = np.asarray(rates, dtype=float)
    return np.geomspace(0.05 * lam.min(), 5.0 * lam.max(), points)


def path_statistics(samples, tau, block: int = 1 << 16) -> PathStatistics:
    """Empirical MGF and covariance, accumulated in blocks around a pilot mean."""
    y = np.asarray(samples, dtype=float)
    tau = np.asarray(tau, dtype=float)
    L = len(y)
    if L < 2:
        raise ValueError("need at least two samples for a covariance")
    pilot = np.exp(-np.outer(tau, y[: min(L, 4096)])).mean(axis=1)
    s1 = np.zeros(len(tau))
    s2 = np.zeros((len(tau), len(tau)))
    for start in range(0, L, block):
        E = np.exp(-np.outer(tau, y[start : start + block])) - pilot[:, None]
        s1 += E.sum(axis=1)
        s2 += E @ E.T
    d = s1 / L
    cov = (s2 - L * np.outer(d, d)) / (L - 1)
    return PathStatistics(tau, pilot + d, cov, L)


def exact_statistics(mgf, tau, L: int) -> PathStatistics:
    """Statistics an infinitely averaged sample of size ``L`` would see."""
    tau = np.asarray(tau, dtype=float)
    m = np.array([mgf(t) for t in tau])
    cov = np.array([[mgf(s + t) for t in tau] for s in tau]) - np.outer(m, m)
    return PathStatistics(tau, m, cov, L)


def _whitener(cov: np.ndarray, rel_tol: float) -> np.ndarray:
    ev, V = np.linalg.eigh((cov + cov.T) / 2)
    keep = ev > rel_tol * ev.max()
    return (V[:, keep] / np.sqrt(ev[keep])).T


@dataclass
class RefineResult:
    weights: np.ndarray  # N x d free weights
    cost: float  # half the sum of squared whitened residuals
    dof: int
    success: bool
    message: str


def refine_weights(
    A: PathLinkMatrix,
    rates: Sequence[float],
    stats: Sequence[PathStatistics],
    start,
    rel_tol: float = EIG_REL_TOL,
    max_nfev: int = 200,
) -> RefineResult:
    lam = np.asarray(rates, dtype=float)
    d = len(lam) - 1
    start = np.asarray(start, dtype=float).reshape(A.N, d)
    whiten = [np.sqrt(s.L) * _whitener(s.cov, rel_tol) for s in stats]
    # per path: basis responses lambda_k / (lambda_k + t) on its grid
    kernels = [lam[None, :] / (lam[None, :] + s.tau[:, None]) for s in stats]

    def link_mgfs(W, i):
        full = np.hstack([W, 1.0 - W.sum(axis=1, keepdims=True)])
        return kernels[i] @ full.T  # (K, N)

    def residuals(x):
        W = x.reshape(A.N, d)
        out = []
        for i, s in enumerate(stats):
            M = np.prod(link_mgfs(W, i)[:, list(A.path(i))], axis=1)
            out.append(whiten[i] @ (s.mean - M))
        return np.concatenate(out)

    def jacobian(x):
        W = x.reshape(A.N, d)
        rows = []
        for i, s in enumerate(stats):
            lm = link_mgfs(W, i)
            links = list(A.path(i))
            M = np.prod(lm[:, links], axis=1)
            J = np.zeros((len(s.tau), A.N * d))
            diff = kernels[i][:, :d] - kernels[i][:, d : d + 1]
            for j in links:
                others = np.prod(lm[:, [l for l in links if l != j]], axis=1) if len(links) > 1 else 1.0
                J[:, j * d : (j + 1) * d] = -(others * np.ones_like(M))[:, None] * diff
            rows.append(whiten[i] @ J)
        return np.vstack(rows)

    fit = least_squares(residuals, start.ravel(), jac=jacobian, method="lm", max_nfev=max_nfev,
                        xtol=1e-12, ftol=1e-12)
    dof = sum(w.shape[0] for w in whiten) - A.N * d
    return RefineResult(fit.x.reshape(A.N, d), float(fit.cost), dof, bool(fit.success), str(fit.message))


def root_combination_starts(A: PathLinkMatrix, solutions, cap: int = 5000) -> list[np.ndarray]:
    """Starting points from every choice of one root per path.

    Links on several paths take the mean of their blocks; imaginary parts
    are dropped.  Returns an empty list when the product of root counts
    exceeds ``cap``.
    """
    counts = [len(s.roots) for s in solutions]
    if not counts or min(counts) == 0 or int(np.prod(counts, dtype=float)) > cap:
        return []
    d = solutions[0].d
    blocks = [s.blocks().real for s in solutions]
    starts = []
    for choice in np.ndindex(*counts):
        acc = np.zeros((A.N, d))
        seen = np.zeros(A.N)
        for i, r in enumerate(choice):
            for pos, j in enumerate(A.path(i)):
                acc[j] += blocks[i][r, pos]
                seen[j] += 1
        if np.all(seen > 0):
            starts.append(acc / seen[:, None])
    return starts


def refine_network(A, rates, stats, solutions, matched=None, cap: int = 5000, dedup: float = 1e-6) -> Refinement | None:
    """Refine from the matched assignment and from root combinations; keep the best fit."""
    starts: list[tuple[str, np.ndarray]] = []
    if matched is not None and np.all(np.isfinite(matched)):
        starts.append(("match", np.asarray(matched, dtype=float)))
    starts += [("roots", s) for s in root_combination_starts(A, solutions, cap)]
    best = None
    tried: list[np.ndarray] = []
    for origin, x0 in starts:
        if any(np.max(np.abs(x0 - t)) <= dedup for t in tried):
            continue
        tried.append(x0)
        fit = refine_weights(A, rates, stats, x0)
        if not np.all(np.isfinite(fit.weights)):
            continue
        if best is None or fit.cost < best[1].cost - 1e-9:
            best = (origin, fit)
    if best is None:
        return None
    origin, fit = best
    return Refinement(fit.weights, fit.cost, fit.dof, origin, len(tried))
