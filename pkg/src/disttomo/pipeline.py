"""End-to-end GH pipeline: MGF estimates, per-path EPS solves, link matching."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .eps import EPSInstance, ExpBasis, assemble_eps
from .gh import GHModel
from .matcher import MatchReport, error_norm, match_links
from .mgf import MGFEstimate, c_vector, default_tau, exact_path_mgf
from .probesim import simulate_paths
from .refine import path_statistics, refine_network, statistics_grid
from .solver import SolutionSet, SolverSettings, solve_square_system
from .topology import PathLinkMatrix


@dataclass
class RunResult:
    taus: list[np.ndarray]
    estimates: list[MGFEstimate]
    instances: list[EPSInstance]
    solutions: list[SolutionSet]
    report: MatchReport


def ideal_sources(A: PathLinkMatrix, models: Sequence[GHModel]):
    return [exact_path_mgf([models[j] for j in A.path(i)]) for i in range(A.m)]


def sampled_sources(A: PathLinkMatrix, models: Sequence[GHModel], L, seed: int):
    return simulate_paths(A, models, L, seed).samples


def path_taus(A: PathLinkMatrix, basis: ExpBasis, taus=None, tau_seed: int = 0) -> list[np.ndarray]:
    if taus is not None:
        out = [np.asarray(t, dtype=float) for t in taus]
        if len(out) != A.m:
            raise ValueError(f"{len(out)} tau grids for {A.m} paths")
        return out
    return [default_tau(basis, len(A.path(i)), seed=tau_seed + i) for i in range(A.m)]


def estimate_targets(A, basis: ExpBasis, sources, taus) -> tuple[list[MGFEstimate], list[EPSInstance]]:
    estimates, instances = [], []
    for i, (src, tau) in enumerate(zip(sources, taus)):
        n = len(A.path(i))
        est = c_vector(src, tau, n, basis.rates[-1], d=basis.d)
        estimates.append(est)
        instances.append(assemble_eps(basis, n, est.tau, est.c_hat, path_id=i))
    return estimates, instances


def solve_all(instances: Sequence[EPSInstance], settings: SolverSettings | None = None,
              workers: int = 1) -> list[SolutionSet]:
    settings = settings or SolverSettings()
    if workers > 1 and len(instances) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(solve_square_system, instances, [settings] * len(instances)))
    return [solve_square_system(inst, settings) for inst in instances]


def run_gh(
    A: PathLinkMatrix,
    basis: ExpBasis,
    sources,
    taus=None,
    tau_seed: int = 0,
    delta: float | None = None,
    settings: SolverSettings | None = None,
    truth=None,
    workers: int = 1,
    refine: bool | None = None,
) -> RunResult:
    """Estimate, solve and match; sampled sources also get the joint fit by default."""
    taus = path_taus(A, basis, taus, tau_seed)
    estimates, instances = estimate_targets(A, basis, sources, taus)
    solutions = solve_all(instances, settings, workers)
    report = match_links(A, solutions, basis.rates, delta)
    sampled = not any(callable(s) for s in sources)
    if refine if refine is not None else sampled:
        if not sampled:
            raise ValueError("the joint fit needs sample arrays, not exact MGFs")
        grid = statistics_grid(basis.rates)
        stats = [path_statistics(s, grid) for s in sources]
        matched = report.estimates() if report.ok else None
        report.refined = refine_network(A, basis.rates, stats, solutions, matched)
    if truth is not None:
        report.algebraic_error_norm = error_norm(report, truth, algebraic=True)
        report.error_norm = error_norm(report, truth)
    return RunResult(taus, estimates, instances, solutions, report)
