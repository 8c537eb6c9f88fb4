"""Empirical MGF estimates and the constant vector that feeds the EPS."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .eps import ExpBasis, build_T


class TauError(ValueError):
    """No acceptable evaluation grid could be drawn."""


@dataclass
class MGFEstimate:
    tau: np.ndarray
    values: np.ndarray
    c_hat: np.ndarray
    L: int | None  # None for exact MGFs


def empirical_mgf(samples, t: float) -> float:
    """``(1/L) sum_l exp(-t Y_l)`` with exactly rounded summation."""
    y = np.asarray(samples, dtype=float)
    if y.size == 0:
        raise ValueError("empirical MGF needs at least one sample")
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    return math.fsum(np.exp(-t * y)) / y.size


def _check_tau(tau: Sequence[float], size: int | None = None) -> np.ndarray:
    tau = np.asarray(tau, dtype=float).ravel()
    if size is not None and len(tau) != size:
        raise ValueError(f"tau needs {size} points, got {len(tau)}")
    if np.any(~np.isfinite(tau)) or np.any(tau <= 0):
        raise ValueError(f"tau entries must be positive: {tau.tolist()}")
    if len(np.unique(tau)) != len(tau):
        raise ValueError(f"tau entries must be distinct: {tau.tolist()}")
    return tau


def c_vector(source, tau: Sequence[float], n_links: int, lam_last: float, d: int | None = None) -> MGFEstimate:
    """``c(t) = M(t) (lambda_{d+1} + t)^N - lambda_{d+1}^N`` on the grid.

    ``source`` is either a sample array or a callable exact MGF.
    """
    tau = _check_tau(tau, None if d is None else d * n_links)
    if callable(source):
        values = np.array([float(source(t)) for t in tau])
        L = None
    else:
        y = np.asarray(source, dtype=float)
        values = np.array([empirical_mgf(y, t) for t in tau])
        L = int(y.size)
    c = values * (lam_last + tau) ** n_links - lam_last**n_links
    return MGFEstimate(tau, values, c, L)


def hoeffding_sample_size(epsilon: float, kappa: float, num_points: int = 1) -> int:
    """Smallest ``L`` with ``num_points * exp(-2 eps^2 L) <= kappa``."""
    if not 0 < epsilon < 1 or not 0 < kappa < 1:
        raise ValueError("epsilon and kappa must lie in (0, 1)")
    if num_points < 1:
        raise ValueError("num_points must be >= 1")
    x = math.log(num_points / kappa) / (2 * epsilon**2)
    L = max(1, math.ceil(x))
    # ceil can overshoot by one when x is an integer up to rounding
    if L > 1 and num_points * math.exp(-2 * epsilon**2 * (L - 1)) <= kappa * (1 + 1e-12):
        L -= 1
    return L


def hoeffding_epsilon(L: int, kappa: float, num_points: int = 1) -> float:
    """Deviation bound holding with probability ``1 - kappa`` at ``L`` samples."""
    return math.sqrt(math.log(num_points / kappa) / (2 * L))


def default_tau(
    basis: ExpBasis,
    n_links: int,
    seed: int = 0,
    max_cond: float = 1e10,
    max_draws: int = 100,
) -> np.ndarray:
    """Jittered log-spaced grid over ``[0.1 min(lambda), 2 max(lambda)]``."""
    size = basis.d * n_links
    lam = np.asarray(basis.rates)
    base = np.geomspace(0.1 * lam.min(), 2.0 * lam.max(), size)
    rng = np.random.default_rng(seed)
    for _ in range(max_draws):
        tau = base * (1.0 + rng.uniform(-0.05, 0.05, size))
        if len(np.unique(tau)) != size:
            continue
        if np.linalg.cond(build_T(basis, tau, n_links)) <= max_cond:
            return tau
    raise TauError(f"no grid with cond(T) <= {max_cond:g} in {max_draws} draws")


def exact_path_mgf(models) -> Callable[[float], float]:
    """Closed-form MGF of a sum of independent GH link delays."""
    from .gh import gh_mgf

    def mgf(t: float) -> float:
        return math.prod(gh_mgf(m, t) for m in models)

    return mgf


def save_tau(path: str | Path, taus: Sequence[Sequence[float]]) -> None:
    Path(path).write_text(json.dumps([[float(t) for t in tau] for tau in taus], indent=1) + "\n")


def load_tau(path: str | Path, n_paths: int | None = None) -> list[np.ndarray]:
    """Per-path grids from a JSON array of arrays (or one array for every path)."""
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = data.get("tau", data)
    if data and all(isinstance(x, (int, float)) for x in data):
        if n_paths is None:
            raise ValueError("a flat tau array needs the path count to broadcast")
        data = [data] * n_paths
    taus = [_check_tau(t) for t in data]
    if n_paths is not None and len(taus) != n_paths:
        raise ValueError(f"tau file has {len(taus)} grids for {n_paths} paths")
    return taus
