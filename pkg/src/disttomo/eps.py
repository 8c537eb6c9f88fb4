"""Assembly of the elementary polynomial system (EPS) for a single path.

A path traversing ``N`` links, each with a GH delay distribution over a shared
exponential basis ``lambda_1 .. lambda_{d+1}``, has a scaled MGF that is a
polynomial in the ``d * N`` free link weights.  This module expands that
product into the tau-independent map ``E(x) = (h_11 .. h_1N, .., h_d1 .. h_dN)``
with exact rational coefficients, builds the evaluation matrix ``T_tau`` and
solves for the target vector ``u = T_tau^{-1} c_tau``.

Indexing conventions: stages ``k`` and powers ``q`` are 1-based (they are
mathematical indices); variable ``x_{jk}`` (block ``j``, stage ``k``, both
1-based) lives at flat position ``(j - 1) * d + (k - 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from itertools import permutations
from typing import Iterator, Mapping, Sequence

import mpmath
import numpy as np

Monomial = tuple[int, ...]
Poly = dict[Monomial, Fraction]


def _exact(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    # shortest round-tripping decimal keeps rationals small (0.005 -> 1/200)
    return Fraction(repr(float(value)))


@dataclass(frozen=True)
class ExpBasis:
    """Distinct positive exponential rates; the last one is the pivot."""

    rates: tuple[float, ...]
    exact: tuple[Fraction, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rates = tuple(float(r) for r in self.rates)
        if len(rates) < 2:
            raise ValueError("basis needs at least two rates (d >= 1)")
        if any(not r > 0 for r in rates):
            raise ValueError(f"rates must be strictly positive: {rates}")
        if len(set(rates)) != len(rates):
            raise ValueError(f"rates must be pairwise distinct: {rates}")
        object.__setattr__(self, "rates", rates)
        object.__setattr__(self, "exact", tuple(_exact(r) for r in self.rates))

    @property
    def d(self) -> int:
        return len(self.rates) - 1

    @property
    def pivot(self) -> float:
        return self.rates[-1]


def lambda_fn(basis: ExpBasis, k: int, t):
    """Rational kernel ``(lambda_k - lambda_{d+1}) t / (lambda_k + t)``."""
    lam = basis.rates[k - 1]
    return (lam - basis.pivot) * t / (lam + t)


def beta(basis: ExpBasis, j: int, k: int) -> Fraction:
    if j == k:
        return Fraction(1)
    lam = basis.exact
    return lam[j - 1] * (lam[k - 1] - lam[-1]) / (lam[j - 1] - lam[k - 1])


def compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    """Nonnegative integer vectors of length ``parts`` summing to ``total``.

    Generated in lexicographically decreasing order of the first entry, so
    ``(total, 0, .., 0)`` comes first.
    """
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in compositions(total - first, parts - 1):
            yield (first,) + rest


def support(omega: Sequence[int]) -> tuple[int, ...]:
    """1-based stages with a positive exponent."""
    return tuple(k + 1 for k, w in enumerate(omega) if w > 0)


def gamma(basis: ExpBasis, k: int, q: int, omega: Sequence[int]) -> Fraction:
    """Coefficient of ``Lambda_k^q`` in the expansion of ``prod_r Lambda_r^{omega_r}``."""
    omega = tuple(omega)
    if len(omega) != basis.d:
        raise ValueError(f"omega must have length d={basis.d}")
    dom = support(omega)
    if k not in dom:
        raise ValueError(f"stage {k} not in support {dom} of omega={omega}")
    if not 1 <= q <= omega[k - 1]:
        raise ValueError(f"power q={q} outside [1, {omega[k - 1]}]")
    others = [r for r in dom if r != k]
    prefactor = Fraction(1)
    for r in dom:
        prefactor *= beta(basis, k, r) ** omega[r - 1]
    total = Fraction(0)
    if others:
        svecs = compositions(omega[k - 1] - q, len(others))
    else:
        svecs = [()] if omega[k - 1] == q else []
    for s in svecs:
        term = Fraction(1)
        for r, s_r in zip(others, s):
            w_r = omega[r - 1]
            term *= math.comb(w_r + s_r - 1, w_r - 1) * beta(basis, r, k) ** s_r
        total += term
    return prefactor * total


def expansion_residual(basis: ExpBasis, omega: Sequence[int], t: float, exact: bool = False) -> float:
    """Relative residual of the partial-fraction expansion of ``Lambda^omega`` at ``t``.

    With ``exact`` both sides are evaluated in rational arithmetic at the
    exact binary value of ``t``, so any nonzero result is an error in the
    coefficients rather than rounding.
    """
    omega = tuple(omega)
    dom = support(omega)
    if not dom:
        raise ValueError("omega must have a nonzero entry")
    if exact:
        lam, tt = basis.exact, Fraction(t)
        pivot = lam[-1]

        def Lam(k):
            return (lam[k - 1] - pivot) * tt / (lam[k - 1] + tt)

        def coef(g):
            return g
    else:
        def Lam(k):
            return lambda_fn(basis, k, t)

        def coef(g):
            return float(g)
    lhs = 1
    for r in dom:
        lhs *= Lam(r) ** omega[r - 1]
    rhs = 0
    for k in dom:
        lam_k = Lam(k)
        for q in range(1, omega[k - 1] + 1):
            rhs += coef(gamma(basis, k, q, omega)) * lam_k**q
    scale = max(abs(lhs), 1e-300)
    return float(abs(lhs - rhs) / scale)


def _var(j: int, k: int, d: int) -> int:
    return (j - 1) * d + (k - 1)


def _multiset_permutations(labels: Sequence[int]) -> Iterator[tuple[int, ...]]:
    counts: dict[int, int] = {}
    for lab in labels:
        counts[lab] = counts.get(lab, 0) + 1
    keys = sorted(counts)
    n = len(labels)
    out = [0] * n

    def rec(pos: int) -> Iterator[tuple[int, ...]]:
        if pos == n:
            yield tuple(out)
            return
        for lab in keys:
            if counts[lab]:
                counts[lab] -= 1
                out[pos] = lab
                yield from rec(pos + 1)
                counts[lab] += 1

    yield from rec(0)


def g_poly(Omega: Sequence[int], n_links: int) -> Poly:
    """Sum over stage assignments of type ``Omega`` of the matching weight monomials.

    ``Omega`` has length ``d + 1``; the last entry counts blocks sitting on the
    pivot stage, which contribute no variable.
    """
    Omega = tuple(Omega)
    if sum(Omega) != n_links or min(Omega) < 0:
        raise ValueError(f"Omega={Omega} is not a composition of {n_links}")
    d = len(Omega) - 1
    labels = [k + 1 for k, c in enumerate(Omega) for _ in range(c)]
    poly: Poly = {}
    for b in _multiset_permutations(labels):
        mono = [0] * (d * n_links)
        for j, stage in enumerate(b, start=1):
            if stage != d + 1:
                mono[_var(j, stage, d)] = 1
        poly[tuple(mono)] = Fraction(1)
    return poly


def multinomial(n: int, parts: Sequence[int]) -> int:
    out = math.factorial(n)
    for p in parts:
        out //= math.factorial(p)
    return out


@lru_cache(maxsize=64)
def _h_table_cached(exact_rates: tuple[Fraction, ...], n_links: int):
    basis = ExpBasis(tuple(float(r) for r in exact_rates))
    d = basis.d
    pivot = exact_rates[-1]
    table: dict[tuple[int, int], Poly] = {
        (k, q): {} for k in range(1, d + 1) for q in range(1, n_links + 1)
    }
    for Omega in compositions(n_links, d + 1):
        omega = Omega[:d]
        dom = support(omega)
        if not dom:
            continue
        g = g_poly(Omega, n_links)
        for k in dom:
            for q in range(1, omega[k - 1] + 1):
                coef = gamma(basis, k, q, omega)
                if coef == 0:
                    continue
                # exponent is sum(omega) - q >= 0 since omega_k >= q
                coef = coef / pivot ** (n_links - q - Omega[d])
                target = table[(k, q)]
                for mono, c in g.items():
                    val = target.get(mono, Fraction(0)) + coef * c
                    if val:
                        target[mono] = val
                    else:
                        target.pop(mono, None)
    return {key: dict(sorted(poly.items(), reverse=True)) for key, poly in table.items()}


def h_table(basis: ExpBasis, n_links: int) -> dict[tuple[int, int], Poly]:
    """All ``h_kq`` polynomials for a path of ``n_links`` links (cached, read-only)."""
    if n_links < 1:
        raise ValueError("a path has at least one link")
    return _h_table_cached(basis.exact, n_links)


def h_poly(basis: ExpBasis, n_links: int, k: int, q: int) -> Poly:
    if not (1 <= k <= basis.d and 1 <= q <= n_links):
        raise ValueError(f"(k, q)=({k}, {q}) out of range")
    return dict(h_table(basis, n_links)[(k, q)])


def eps_order(d: int, n_links: int) -> list[tuple[int, int]]:
    """Component order of ``E``: all powers of stage 1, then stage 2, ..."""
    return [(k, q) for k in range(1, d + 1) for q in range(1, n_links + 1)]


def poly_eval(poly: Mapping[Monomial, Fraction], x) -> complex:
    x = np.asarray(x)
    total = 0
    for mono, c in poly.items():
        term = float(c)
        for v, e in enumerate(mono):
            if e:
                term = term * x[v] ** e
        total = total + term
    return total


def eval_product_form(basis: ExpBasis, n_links: int, x, t: float):
    """``prod_j (sum_k x_jk Lambda_k(t) + lambda_{d+1})`` for flat weights ``x``."""
    d = basis.d
    x = np.asarray(x).reshape(n_links, d)
    kern = np.array([lambda_fn(basis, k, t) for k in range(1, d + 1)])
    return np.prod(x @ kern + basis.pivot)


def eval_h_expansion(basis: ExpBasis, n_links: int, x, t: float):
    """Same quantity as :func:`eval_product_form`, through the ``h_kq`` table."""
    table = h_table(basis, n_links)
    lam = basis.pivot
    total = lam**n_links
    for (k, q), poly in table.items():
        total = total + poly_eval(poly, x) * lambda_fn(basis, k, t) ** q * lam ** (n_links - q)
    return total


def build_T(basis: ExpBasis, tau: Sequence[float], n_links: int, square: bool = True) -> np.ndarray:
    """Rows ``Lambda_k(t)^q lambda_{d+1}^{N-q}`` per grid point, columns in EPS order.

    With ``square=False`` any number of grid points (at least ``d * N``) is
    allowed, giving the design matrix of an overdetermined fit.
    """
    tau = np.asarray(tau, dtype=float)
    d = basis.d
    size = d * n_links
    if tau.ndim != 1 or (square and len(tau) != size) or len(tau) < size:
        raise ValueError(f"tau must hold d*N = {size} points, got {tau.shape}")
    if np.any(tau <= 0):
        raise ValueError("tau entries must be strictly positive")
    if len(np.unique(tau)) != len(tau):
        raise ValueError("tau entries must be distinct")
    T = np.empty((len(tau), size))
    for col, (k, q) in enumerate(eps_order(d, n_links)):
        T[:, col] = lambda_fn(basis, k, tau) ** q * basis.pivot ** (n_links - q)
    return T


def build_W(omegas: Sequence[int], lambdas: Sequence[float], ts: Sequence[float]) -> np.ndarray:
    """Block matrix of descending powers ``1/(lambda_i + t_j)^n``."""
    ts = np.asarray(ts, dtype=float)
    cols = []
    for w, lam in zip(omegas, lambdas):
        for n in range(w, 0, -1):
            cols.append(1.0 / (lam + ts) ** n)
    W = np.column_stack(cols)
    if W.shape[0] != W.shape[1]:
        raise ValueError("sum(omegas) must equal len(ts)")
    return W


def det_W_closed_form(omegas: Sequence[int], lambdas: Sequence[float], ts: Sequence[float]) -> float:
    ts = [float(t) for t in ts]
    if sum(omegas) != len(ts):
        raise ValueError("sum(omegas) must equal len(ts)")
    val = 1.0
    for t in ts:
        for w, lam in zip(omegas, lambdas):
            val /= (lam + t) ** w
    for i1 in range(len(lambdas)):
        for i2 in range(i1 + 1, len(lambdas)):
            val *= (lambdas[i2] - lambdas[i1]) ** (omegas[i1] * omegas[i2])
    for j1 in range(len(ts)):
        for j2 in range(j1 + 1, len(ts)):
            val *= ts[j2] - ts[j1]
    return val


def high_precision_det(M, dps: int = 50) -> float:
    """Determinant of a float matrix by LU in ``dps``-digit arithmetic."""
    with mpmath.workdps(dps):
        return float(mpmath.det(mpmath.matrix(np.asarray(M, dtype=float).tolist())))


def closed_form_det_W(omegas, lambdas, ts) -> tuple[float, float]:
    """(closed-form, numerically computed) determinant of the ``W`` matrix.

    The numeric side builds and eliminates ``W`` in 50-digit arithmetic so
    confluent blocks do not lose digits to cancellation.
    """
    with mpmath.workdps(50):
        cols = [
            [1 / (mpmath.mpf(lam) + mpmath.mpf(t)) ** n for t in ts]
            for w, lam in zip(omegas, lambdas)
            for n in range(w, 0, -1)
        ]
        if len(cols) != len(ts):
            raise ValueError("sum(omegas) must equal len(ts)")
        numeric = float(mpmath.det(mpmath.matrix(cols).T))
    return det_W_closed_form(omegas, lambdas, ts), numeric


def det_T_closed_form(basis: ExpBasis, tau: Sequence[float], n_links: int) -> float:
    """Determinant of ``T_tau`` via column scaling and reduction to ``W``.

    Columns of ``T_tau`` are ``(t/(lambda_k+t))^q`` scaled by
    ``(lambda_k - lambda_{d+1})^q lambda_{d+1}^{N-q}``; the binomial column
    operations that turn powers of ``t/(lambda+t)`` into ``lambda^{q-1} t/(lambda+t)^q``
    carry the same sign as reversing each block, so they cancel.
    """
    d, lam = basis.d, basis.pivot
    rates = basis.rates[:d]
    val = float(np.prod(tau))
    for r in rates:
        val *= r ** (n_links * (n_links - 1) // 2)
    for k in range(d):
        for q in range(1, n_links + 1):
            val *= (rates[k] - lam) ** q * lam ** (n_links - q)
    return val * det_W_closed_form([n_links] * d, rates, tau)


@dataclass
class CompiledSystem:
    """Dense numeric form of a polynomial map for batched evaluation."""

    exps: np.ndarray  # (terms, nvars)
    coefs: np.ndarray  # (terms, neqs)
    degrees: tuple[int, ...]

    @classmethod
    def from_polys(cls, polys: Sequence[Mapping[Monomial, Fraction]], nvars: int) -> "CompiledSystem":
        monos = sorted({m for p in polys for m in p}, reverse=True)
        index = {m: i for i, m in enumerate(monos)}
        exps = np.array(monos, dtype=int).reshape(len(monos), nvars)
        coefs = np.zeros((len(monos), len(polys)))
        for e, p in enumerate(polys):
            for m, c in p.items():
                coefs[index[m], e] = float(c)
        degrees = tuple(max((sum(m) for m in p), default=0) for p in polys)
        return cls(exps, coefs, degrees)

    def _monos(self, X: np.ndarray, exps: np.ndarray) -> np.ndarray:
        return np.prod(X[:, None, :] ** exps[None, :, :], axis=2)

    def evaluate(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=complex))
        return self._monos(X, self.exps) @ self.coefs

    def jacobian(self, X) -> np.ndarray:
        """Batched Jacobians, shape ``(points, neqs, nvars)``."""
        X = np.atleast_2d(np.asarray(X, dtype=complex))
        P, n = X.shape
        J = np.empty((P, self.coefs.shape[1], n), dtype=complex)
        for v in range(n):
            pw = self.exps[:, v]
            dexps = self.exps.copy()
            dexps[:, v] = np.maximum(pw - 1, 0)
            J[:, :, v] = (self._monos(X, dexps) * pw[None, :]) @ self.coefs
        return J


@dataclass
class EPSInstance:
    """One path's square system ``E(x) = u`` plus the data that produced ``u``."""

    basis: ExpBasis
    n_links: int
    target: np.ndarray
    tau: np.ndarray | None = None
    c_hat: np.ndarray | None = None
    path_id: int | None = None

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=float)
        if self.target.shape != (self.size,):
            raise ValueError(f"target must have length d*N = {self.size}")

    @property
    def d(self) -> int:
        return self.basis.d

    @property
    def size(self) -> int:
        return self.basis.d * self.n_links

    @property
    def h_table(self) -> dict[tuple[int, int], Poly]:
        return h_table(self.basis, self.n_links)

    def polys(self) -> list[Poly]:
        table = self.h_table
        return [table[key] for key in eps_order(self.d, self.n_links)]

    @property
    def compiled(self) -> CompiledSystem:
        return _compiled(self.basis.exact, self.n_links)

    def E(self, X) -> np.ndarray:
        return self.compiled.evaluate(X)

    def residual(self, X) -> np.ndarray:
        return self.E(X) - self.target[None, :]

    def to_json(self) -> dict:
        order = eps_order(self.d, self.n_links)
        return {
            "path_id": self.path_id,
            "rates": list(self.basis.rates),
            "n_links": self.n_links,
            "tau": None if self.tau is None else self.tau.tolist(),
            "c_hat": None if self.c_hat is None else self.c_hat.tolist(),
            "target": self.target.tolist(),
            "equations": [
                {
                    "k": k,
                    "q": q,
                    "terms": [
                        {"exponents": list(m), "coef": str(c)}
                        for m, c in self.h_table[(k, q)].items()
                    ],
                }
                for k, q in order
            ],
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "EPSInstance":
        return cls(
            basis=ExpBasis(tuple(data["rates"])),
            n_links=int(data["n_links"]),
            target=np.array(data["target"], dtype=float),
            tau=None if data.get("tau") is None else np.array(data["tau"], dtype=float),
            c_hat=None if data.get("c_hat") is None else np.array(data["c_hat"], dtype=float),
            path_id=data.get("path_id"),
        )


@lru_cache(maxsize=64)
def _compiled(exact_rates: tuple[Fraction, ...], n_links: int) -> CompiledSystem:
    table = _h_table_cached(exact_rates, n_links)
    d = len(exact_rates) - 1
    return CompiledSystem.from_polys([table[key] for key in eps_order(d, n_links)], d * n_links)


def E_map(basis: ExpBasis, n_links: int, x) -> np.ndarray:
    """Evaluate ``E`` at one flat point."""
    return _compiled(basis.exact, n_links).evaluate(np.asarray(x))[0]


def assemble_eps(basis: ExpBasis, n_links: int, tau, c_hat, path_id: int | None = None) -> EPSInstance:
    T = build_T(basis, tau, n_links)
    c_hat = np.asarray(c_hat, dtype=float)
    target = np.linalg.solve(T, c_hat)
    return EPSInstance(basis, n_links, target, np.asarray(tau, dtype=float), c_hat, path_id)


def stage_major(d: int, n_links: int) -> list[int]:
    """Column order listing every link's stage-1 weight, then stage 2, and so on."""
    return [_var(j, k, d) for k in range(1, d + 1) for j in range(1, n_links + 1)]


def ordering_sign(d: int, n_links: int) -> int:
    """Parity of the reorder from block-major to stage-major unknowns."""
    return -1 if (d * (d - 1) // 2) * (n_links * (n_links - 1) // 2) % 2 else 1


def eps_jacobian(instance: EPSInstance, x, order: str = "block") -> np.ndarray:
    """Rows follow the equation order; columns are block-major unless ``order="stage"``."""
    J = instance.compiled.jacobian(np.asarray(x))[0]
    if order == "stage":
        return J[:, stage_major(instance.d, instance.n_links)]
    if order != "block":
        raise ValueError(f"order must be 'block' or 'stage', got {order!r}")
    return J


def block_constant_point(values: Sequence[complex], d: int) -> np.ndarray:
    return np.repeat(np.asarray(values, dtype=complex), d)


def permute_blocks(x, sigma: Sequence[int], d: int) -> np.ndarray:
    x = np.asarray(x).reshape(-1, d)
    return x[list(sigma)].reshape(-1)


def permute_monomial(mono: Monomial, sigma: Sequence[int], d: int) -> Monomial:
    blocks = [mono[j * d:(j + 1) * d] for j in range(len(mono) // d)]
    return tuple(e for j in sigma for e in blocks[j])


def is_block_symmetric(poly: Mapping[Monomial, Fraction], n_links: int, d: int) -> bool:
    for sigma in permutations(range(n_links)):
        permuted = {permute_monomial(m, sigma, d): c for m, c in poly.items()}
        if permuted != dict(poly):
            return False
    return True
