"""Generalized hyperexponential (GH) delay distributions.

A GH law over distinct rates ``lambda_1 .. lambda_{d+1}`` has CDF
``F(u) = sum_k w_k (1 - exp(-lambda_k u))`` with weights summing to one.
Weights may be negative as long as the density stays nonnegative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

WEIGHT_SUM_TOL = 1e-12
DENSITY_TOL = 1e-12
GRID_POINTS = 2048


class CapacityError(ValueError):
    """Requested construction would exceed the configured basis size."""


class InversionError(RuntimeError):
    """Inverse-CDF sampling failed to converge (a defect, not user error)."""


@dataclass(frozen=True)
class GHModel:
    rates: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        rates = tuple(float(r) for r in self.rates)
        weights = tuple(float(w) for w in self.weights)
        if len(rates) == 0:
            raise ValueError("GH model needs at least one rate")
        if len(rates) != len(weights):
            raise ValueError(f"{len(rates)} rates but {len(weights)} weights")
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "weights", weights)

    @property
    def d(self) -> int:
        return len(self.rates) - 1

    @property
    def mean(self) -> float:
        return math.fsum(w / r for w, r in zip(self.weights, self.rates))

    def to_json(self) -> dict:
        return {"rates": list(self.rates), "weights": list(self.weights)}

    @classmethod
    def from_json(cls, data: dict) -> "GHModel":
        return cls(tuple(data["rates"]), tuple(data["weights"]))

    @classmethod
    def from_free_weights(cls, rates: Sequence[float], free: Sequence[float]) -> "GHModel":
        """Complete ``d`` free weights with ``w_{d+1} = 1 - sum``."""
        free = [float(w) for w in free]
        return cls(tuple(rates), tuple(free) + (1.0 - math.fsum(free),))


@dataclass(frozen=True)
class Violation:
    kind: str  # "rates" | "duplicate_rates" | "weight_sum" | "density"
    message: str
    witness: float | None = None

    def __str__(self) -> str:
        return self.message


def density(model: GHModel, u):
    u = np.asarray(u, dtype=float)
    lam = np.asarray(model.rates)
    w = np.asarray(model.weights)
    return np.exp(-np.multiply.outer(u, lam)) @ (w * lam)


def _density_scale(model: GHModel) -> float:
    # floating evaluation of a sum with large cancelling terms is only this good
    return max(1.0, float(np.sum(np.abs(np.asarray(model.weights) * np.asarray(model.rates)))))


def gh_validate(model: GHModel, sum_tol: float = WEIGHT_SUM_TOL) -> Violation | None:
    """First violated constraint of ``model``, or ``None`` when it is valid."""
    lam = np.asarray(model.rates)
    if not np.all(np.isfinite(lam)) or np.any(lam <= 0):
        return Violation("rates", f"rates must be finite and strictly positive: {model.rates}")
    if len(set(model.rates)) != len(model.rates):
        dup = sorted(r for r in set(model.rates) if model.rates.count(r) > 1)
        return Violation("duplicate_rates", f"duplicate rates {dup}")
    if not np.all(np.isfinite(model.weights)):
        return Violation("weight_sum", "weights must be finite")
    total = math.fsum(model.weights)
    if abs(total - 1.0) > sum_tol:
        return Violation("weight_sum", f"weights sum to {total!r}, not 1 within {sum_tol:g}")
    tol = DENSITY_TOL * _density_scale(model)
    u_max = 50.0 / lam.min()
    grid = np.concatenate([[0.0], np.geomspace(1e-6 / lam.max(), u_max, GRID_POINTS - 1)])
    f = density(model, grid)
    bad = np.where(f < -tol)[0]
    if len(bad):
        u = float(grid[bad[0]])
        return Violation("density", f"density {f[bad[0]]:.3g} < 0 at u={u:.6g}", witness=u)
    # beyond the grid the slowest-decaying term with a nonzero weight dominates
    order = np.argsort(lam)
    for k in order:
        if model.weights[k] != 0:
            if model.weights[k] < 0:
                return Violation("density", "density negative in the tail (slowest rate has negative weight)",
                                 witness=u_max)
            break
    return None


def check(model: GHModel, sum_tol: float = WEIGHT_SUM_TOL) -> GHModel:
    """Raise ``ValueError`` if ``model`` is invalid; otherwise return it."""
    v = gh_validate(model, sum_tol)
    if v is not None:
        raise ValueError(f"invalid GH model: {v}")
    return model


def gh_cdf(model: GHModel, u):
    check(model)
    u = np.asarray(u, dtype=float)
    if np.any(u < 0):
        raise ValueError("CDF argument must be nonnegative")
    lam = np.asarray(model.rates)
    w = np.asarray(model.weights)
    out = -np.expm1(-np.multiply.outer(u, lam)) @ w
    return float(out) if out.ndim == 0 else out


def gh_mgf(model: GHModel, t):
    """``E[exp(-t X)] = sum_k w_k lambda_k / (lambda_k + t)``."""
    check(model)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("MGF argument must be nonnegative")
    lam = np.asarray(model.rates)
    w = np.asarray(model.weights)
    out = (lam / np.add.outer(t, lam)) @ w
    return float(out) if out.ndim == 0 else out


def _survival(lam: np.ndarray, w: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.exp(-u[:, None] * lam[None, :]) @ w


def _inverse_survival(model: GHModel, v: np.ndarray, tol: float = 1e-12, polish: int = 2) -> np.ndarray:
    """Solve ``S(u) = v`` for ``v`` in ``(0, 1]`` by bracketed bisection plus Newton polish."""
    lam = np.asarray(model.rates)
    w = np.asarray(model.weights)
    grid = np.unique(np.concatenate([
        np.linspace(0.0, 20.0 / lam.max(), 512),
        np.geomspace(1.0 / lam.max(), 50.0 / lam.min(), 1536),
    ]))
    s_grid = np.minimum.accumulate(_survival(lam, w, grid))
    # s_grid is nonincreasing; find i with s_grid[i] >= v > s_grid[i+1]
    idx = np.searchsorted(-s_grid, -v, side="right") - 1
    idx = np.clip(idx, 0, len(grid) - 2)
    lo = grid[idx].copy()
    hi = grid[idx + 1].copy()
    beyond = v < s_grid[-1]
    if np.any(beyond):
        # far tail: the slowest rate alone governs S
        k = int(np.argmin(lam))
        lo[beyond] = grid[-1]
        hi[beyond] = np.maximum(grid[-1] * 2, -np.log(v[beyond] / max(w[k], 1e-300)) / lam[k] * 2)
    width = float(np.max(hi - lo)) if len(v) else 0.0
    steps = max(0, math.ceil(math.log2(max(width, tol) / tol))) if width > 0 else 0
    if steps > 200:
        raise InversionError("bisection bracket too wide")
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        above = _survival(lam, w, mid) > v
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    u = 0.5 * (lo + hi)
    for _ in range(polish):
        f = density(model, u)
        step = np.where(f > 0, (_survival(lam, w, u) - v) / np.where(f > 0, f, 1.0), 0.0)
        cand = u + step
        # keep the polished point inside the final bracket
        u = np.where((cand >= lo) & (cand <= hi), cand, u)
    if not np.all(np.isfinite(u)):
        raise InversionError("inverse CDF produced non-finite values")
    return np.maximum(u, 0.0)


def sample_with(model: GHModel, rng: np.random.Generator, n: int) -> np.ndarray:
    """IID draws using an existing generator."""
    if n < 1:
        raise ValueError("sample count must be >= 1")
    v = 1.0 - rng.random(n)  # in (0, 1]
    return _inverse_survival(model, v)


def gh_sample(model: GHModel, seed: int, n: int) -> np.ndarray:
    check(model)
    return sample_with(model, np.random.default_rng(seed), n)


def hypoexponential_weights(rates: Sequence[float]) -> np.ndarray:
    """GH weights of a sum of independent exponentials with distinct ``rates``.

    The products cancel heavily for close rates, so they are formed exactly
    from the given floats and rounded once.
    """
    r = [Fraction(float(x)) for x in rates]
    out = np.empty(len(r))
    for j, rj in enumerate(r):
        prod = Fraction(1)
        for l, rl in enumerate(r):
            if l != j:
                prod *= rl / (rl - rj)
        out[j] = float(prod)
    return out


def gh_approximate(
    target_cdf: Callable[[float], float],
    n: int,
    nu_n: int,
    m: int = 12,
    eps: float = 0.0577,
    max_basis: int = 4096,
) -> GHModel:
    """GH mixture approximating ``target_cdf`` on a ``1/n`` lattice.

    Bucket ``k`` (mass ``F(k/n) - F((k-1)/n)``) and the tail mass beyond
    ``nu_n / n`` are each carried by a perturbed Erlang-``m`` law with mean
    ``k / n``.  Stage rates are ``c (1 + j eps)``, ``j = 0..m-1``.
    """
    if n < 1 or nu_n < 1 or m < 1:
        raise ValueError("n, nu_n and m must be >= 1")
    size = m * (nu_n + 1)
    if size > max_basis:
        raise CapacityError(f"basis of {size} rates exceeds cap {max_basis}")
    grid = [target_cdf(k / n) for k in range(nu_n + 1)]
    masses = [grid[k] - grid[k - 1] for k in range(1, nu_n + 1)] + [1.0 - grid[nu_n]]
    factors = np.array([1.0 + j * eps for j in range(m)])
    rates: list[float] = []
    weights: list[float] = []
    for k, p in enumerate(masses, start=1):
        c = (n / k) * float(np.sum(1.0 / factors))
        r = c * factors
        rates.extend(r)
        weights.extend(p * hypoexponential_weights(r))
    if len(set(rates)) != len(rates):
        raise CapacityError("perturbed Erlang rates collide; change eps")
    # absorb rounding drift in the smallest weight so the sum is one
    i = int(np.argmin(np.abs(weights)))
    for _ in range(3):
        weights[i] += 1.0 - math.fsum(weights)
    return GHModel(tuple(rates), tuple(weights))
