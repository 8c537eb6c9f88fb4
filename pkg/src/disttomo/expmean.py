"""Exponential link means from path delays.

With ``X_j ~ Exp(mean m_j)`` the reciprocal path MGF is the polynomial
``prod_j (1 + m_j t) = 1 + sum_k e_k(m) t^k``, so sampling ``1/M`` on ``N``
points and inverting a Vandermonde matrix gives the elementary symmetric
values of the means.  The means are then the roots of one univariate
polynomial, and every permutation of them solves the system.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import mpmath
import numpy as np

from .matcher import MatchReport, error_norm, match_links
from .mgf import _check_tau, empirical_mgf
from .solver import SolutionSet
from .topology import PathLinkMatrix

IMAG_TOL = 1e-6
MGF_FLOOR = 1e-300
EQUAL_ROOT_TOL = 1e-9


class ExpMeanError(ValueError):
    """Target overflow, complex means or repeated means."""


@dataclass
class ExpMeanInstance:
    n_links: int
    tau: np.ndarray
    c: np.ndarray  # 1 / M(t) on tau
    target: np.ndarray  # e_1..e_N
    path_id: int | None = None
    L: int | None = None


def vandermonde(tau: Sequence[float]) -> np.ndarray:
    """``T[j, k] = t_j^(k+1)`` for ``k = 0..N-1``."""
    t = np.asarray(tau, dtype=float)
    return t[:, None] ** np.arange(1, len(t) + 1)[None, :]


def vandermonde_det(tau: Sequence[float]) -> float:
    """``prod t_j * prod_{i<j} (t_j - t_i)``."""
    t = [float(x) for x in tau]
    val = math.prod(t)
    for i, j in itertools.combinations(range(len(t)), 2):
        val *= t[j] - t[i]
    return val


def vandermonde_det_numeric(tau: Sequence[float], dps: int = 50) -> float:
    """Determinant of ``T`` built and eliminated in ``dps``-digit arithmetic."""
    with mpmath.workdps(dps):
        t = [mpmath.mpf(float(x)) for x in tau]
        M = mpmath.matrix([[tj ** (k + 1) for k in range(len(t))] for tj in t])
        return float(mpmath.det(M))


def elementary_symmetric(x) -> np.ndarray:
    """``(e_1, ..., e_N)`` of the entries of ``x`` by the product recurrence."""
    x = np.asarray(x)
    e = np.zeros(len(x) + 1, dtype=np.result_type(x, float))
    e[0] = 1
    for v in x:
        e[1:] = e[1:] + v * e[:-1]
    return e[1:]


def esym_jacobian(x) -> np.ndarray:
    """``d e_k / d x_j = e_{k-1}`` of ``x`` with ``x_j`` removed."""
    x = np.asarray(x)
    n = len(x)
    J = np.zeros((n, n), dtype=np.result_type(x, float))
    for j in range(n):
        rest = np.delete(x, j)
        J[0, j] = 1
        J[1:, j] = elementary_symmetric(rest)
    return J


def esym_jacobian_det(x) -> complex:
    """Closed form ``prod_{j<k} (x_j - x_k)``."""
    x = list(np.asarray(x))
    val = 1.0
    for j, k in itertools.combinations(range(len(x)), 2):
        val *= x[j] - x[k]
    return val


def esym_jacobian_det_numeric(x, dps: int = 50) -> float:
    """Jacobian built and eliminated in ``dps``-digit arithmetic."""
    with mpmath.workdps(dps):
        v = [mpmath.mpf(float(a)) for a in x]
        n = len(v)
        J = mpmath.matrix(n, n)
        for j in range(n):
            e = [mpmath.mpf(1)] + [mpmath.mpf(0)] * (n - 1)
            for a in v[:j] + v[j + 1:]:
                for k in range(n - 1, 0, -1):
                    e[k] += a * e[k - 1]
            for k in range(n):
                J[k, j] = e[k]
        return float(mpmath.det(J))


def build_expmean_eps(source, tau: Sequence[float], n_links: int, path_id: int | None = None) -> ExpMeanInstance:
    """Target ``e = T^-1 (1/M - 1)`` from samples or a callable exact MGF."""
    tau = _check_tau(tau, n_links)
    if callable(source):
        m = np.array([float(source(t)) for t in tau])
        L = None
    else:
        y = np.asarray(source, dtype=float)
        m = np.array([empirical_mgf(y, t) for t in tau])
        L = int(y.size)
    small = np.flatnonzero(m <= MGF_FLOOR)
    if small.size:
        raise ExpMeanError(f"MGF estimate {m[small[0]]:.3g} at t={tau[small[0]]:g} overflows 1/M")
    c = 1.0 / m
    target = np.linalg.solve(vandermonde(tau), c - 1.0)
    return ExpMeanInstance(n_links, tau, c, target, path_id, L)


def companion_roots(e: Sequence[float]) -> np.ndarray:
    """Roots of ``z^N - e_1 z^(N-1) + e_2 z^(N-2) - ...`` as companion eigenvalues."""
    e = np.asarray(e, dtype=float)
    n = len(e)
    coeffs = np.array([(-1) ** k * e[k] for k in range(n)])  # z^n = sum coeffs[k] z^(n-1-k)
    C = np.zeros((n, n))
    C[0, :] = coeffs
    C[1:, :-1] = np.eye(n - 1)
    return np.linalg.eigvals(C)


def solve_expmean(instance: ExpMeanInstance, imag_tol: float = IMAG_TOL, strict: bool = False) -> np.ndarray:
    """Means sorted descending; with ``strict`` complex or repeated roots raise."""
    z = companion_roots(instance.target)
    z = z[np.lexsort((-z.imag, -z.real))]
    bad = np.abs(z.imag) > imag_tol * (1 + np.abs(z))
    if strict and np.any(bad):
        raise ExpMeanError(f"complex means {z[bad].tolist()} (noise too large for real roots)")
    if strict:
        gaps = np.abs(np.diff(z))
        if np.any(gaps <= EQUAL_ROOT_TOL * (1 + np.abs(z[:-1]))):
            raise ExpMeanError("repeated means: links on a path must have distinct means")
    return z if np.any(bad) else z.real


def solution_set(instance: ExpMeanInstance, means: np.ndarray) -> SolutionSet:
    """All orderings of the means, packaged for the matcher (``d = 1``)."""
    means = np.asarray(means, dtype=complex)
    n = len(means)
    roots = np.array([means[list(p)] for p in itertools.permutations(range(n))], dtype=complex)
    res = np.array([np.max(np.abs(elementary_symmetric(r) - instance.target)) for r in roots])
    dets = np.array([esym_jacobian_det(r) for r in roots], dtype=complex)
    return SolutionSet(
        d=1,
        n_links=n,
        roots=roots.reshape(len(roots), n),
        residuals=res,
        jacobian_dets=dets,
        multiplicity=np.ones(len(roots), dtype=int),
        n_paths=len(roots),
        path_id=instance.path_id,
        representatives=means.reshape(n, 1),
    )


def default_expmean_tau(n_links: int, seed: int = 0, low: float = 0.1, high: float = 2.0) -> np.ndarray:
    base = np.geomspace(low, high, n_links)
    if n_links == 1:
        return base
    rng = np.random.default_rng(seed)
    return base * (1.0 + rng.uniform(-0.05, 0.05, n_links))


@dataclass
class ExpMeanRun:
    taus: list[np.ndarray]
    instances: list[ExpMeanInstance]
    solutions: list[SolutionSet]
    report: MatchReport


def exp_path_mgf(means: Sequence[float]):
    def mgf(t: float) -> float:
        return math.prod(1.0 / (1.0 + m * t) for m in means)

    return mgf


def run_expmean(A: PathLinkMatrix, sources, taus=None, tau_seed: int = 0, delta: float | None = None,
                truth=None) -> ExpMeanRun:
    if taus is None:
        taus = [default_expmean_tau(len(A.path(i)), tau_seed + i) for i in range(A.m)]
    if len(taus) != A.m:
        raise ValueError(f"{len(taus)} tau grids for {A.m} paths")
    instances, solutions = [], []
    for i, (src, tau) in enumerate(zip(sources, taus)):
        inst = build_expmean_eps(src, tau, len(A.path(i)), path_id=i)
        instances.append(inst)
        solutions.append(solution_set(inst, solve_expmean(inst)))
    report = match_links(A, solutions, None, delta)
    if truth is not None:
        report.error_norm = error_norm(report, np.asarray(truth, dtype=float).reshape(A.N, 1))
    return ExpMeanRun([np.asarray(t) for t in taus], instances, solutions, report)
