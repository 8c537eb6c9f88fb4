"""Quick numeric oracle checks run by ``disttomo selftest``.

Each check compares a closed form against an independent numeric
evaluation on a fixed-seed batch of random instances.
"""

from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np

from . import expmean as em
from .eps import (
    EPSInstance,
    ExpBasis,
    block_constant_point,
    build_T,
    closed_form_det_W,
    det_T_closed_form,
    eps_jacobian,
    eval_h_expansion,
    eval_product_form,
    expansion_residual,
    h_table,
    high_precision_det,
)

SEED = 20240501


def _rates(rng, d: int) -> tuple[float, ...]:
    while True:
        lam = tuple(float(x) for x in np.round(rng.uniform(0.5, 8.0, d + 1), 3))
        if len(set(lam)) == d + 1:
            return lam


def check_example() -> tuple[bool, str]:
    """E for two links, two free stages, rates (5, 3, 1) as exact rationals."""
    F = Fraction
    expected = {
        (1, 1): {(1, 0, 0, 0): F(1), (0, 0, 1, 0): F(1), (1, 0, 0, 1): F(5), (0, 1, 1, 0): F(5)},
        (1, 2): {(1, 0, 1, 0): F(1)},
        (2, 1): {(0, 1, 0, 0): F(1), (0, 0, 0, 1): F(1), (1, 0, 0, 1): F(-6), (0, 1, 1, 0): F(-6)},
        (2, 2): {(0, 1, 0, 1): F(1)},
    }
    table = {k: dict(v) for k, v in h_table(ExpBasis((5, 3, 1)), 2).items()}
    return table == expected, "4 polynomials compared term by term"


def check_expansion(n: int = 100) -> tuple[bool, str]:
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(n):
        d = int(rng.integers(1, 5))
        basis = ExpBasis(_rates(rng, d))
        while True:
            omega = rng.integers(0, 4, d)
            if 0 < omega.sum() <= 6:
                break
        worst = max(worst, expansion_residual(basis, omega.tolist(), float(rng.uniform(0.05, 10)), exact=True))
    return worst <= 1e-9, f"max relative residual {worst:.2e}"


def check_representation(n: int = 50) -> tuple[bool, str]:
    rng = np.random.default_rng(SEED + 1)
    worst = 0.0
    for _ in range(n):
        d, N = int(rng.integers(1, 3)), int(rng.integers(1, 4))
        basis = ExpBasis(_rates(rng, d))
        x = rng.uniform(-1, 1, d * N)
        t = float(rng.uniform(0.1, 5))
        a, b = eval_product_form(basis, N, x, t), eval_h_expansion(basis, N, x, t)
        worst = max(worst, abs(a - b) / max(abs(a), 1e-300))
    return worst <= 1e-10, f"max relative gap {worst:.2e}"


def check_det_W(n: int = 50) -> tuple[bool, str]:
    rng = np.random.default_rng(SEED + 2)
    worst = 0.0
    for _ in range(n):
        d = int(rng.integers(1, 4))
        omegas = rng.integers(1, 3, d).tolist()
        lam = _rates(rng, d)[:d]
        ts = np.sort(rng.uniform(0.1, 6, sum(omegas)))
        closed, numeric = closed_form_det_W(omegas, lam, ts)
        worst = max(worst, abs(closed - numeric) / abs(closed))
    return worst <= 1e-8, f"max relative gap {worst:.2e}"


def check_det_T(n: int = 20) -> tuple[bool, str]:
    rng = np.random.default_rng(SEED + 3)
    worst = 0.0
    for _ in range(n):
        d, N = int(rng.integers(1, 3)), int(rng.integers(1, 3))
        basis = ExpBasis(_rates(rng, d))
        tau = np.sort(rng.uniform(0.1, 6, d * N))
        closed = det_T_closed_form(basis, tau, N)
        numeric = high_precision_det(build_T(basis, tau, N))
        worst = max(worst, abs(closed - numeric) / abs(closed))
    return worst <= 1e-8, f"max relative gap {worst:.2e}"


def check_jacobian(n: int = 20) -> tuple[bool, str]:
    rng = np.random.default_rng(SEED + 4)
    worst = 0.0
    for _ in range(n):
        d, N = int(rng.integers(1, 3)), int(rng.integers(2, 4))
        basis = ExpBasis(_rates(rng, d))
        inst = EPSInstance(basis, N, np.zeros(d * N))
        a = rng.normal(size=N) + 1j * rng.normal(size=N)
        numeric = np.linalg.det(eps_jacobian(inst, block_constant_point(a, d), order="stage"))
        closed = np.prod([(a[i] - a[j]) ** d for i, j in itertools.combinations(range(N), 2)])
        worst = max(worst, abs(numeric - closed) / abs(closed))
    return worst <= 1e-8, f"max relative gap {worst:.2e}"


def check_expmean(n: int = 50) -> tuple[bool, str]:
    rng = np.random.default_rng(SEED + 5)
    worst_j = worst_v = 0.0
    for _ in range(n):
        N = int(rng.integers(2, 6))
        x = rng.uniform(0.1, 4, N)
        closed = em.esym_jacobian_det(x)
        worst_j = max(worst_j, abs(em.esym_jacobian_det_numeric(x) - closed) / abs(closed))
        t = rng.uniform(0.1, 3, N)
        closed = em.vandermonde_det(t)
        worst_v = max(worst_v, abs(em.vandermonde_det_numeric(t) - closed) / abs(closed))
    return worst_j <= 1e-10 and worst_v <= 1e-12, f"jacobian {worst_j:.2e}, vandermonde {worst_v:.2e}"


CHECKS = {
    "eps-example": check_example,
    "expansion-identity": check_expansion,
    "product-vs-expansion": check_representation,
    "det-W-closed-form": check_det_W,
    "det-T-closed-form": check_det_T,
    "jacobian-block-constant": check_jacobian,
    "expmean-determinants": check_expmean,
}


def run_all() -> list[tuple[str, bool, str]]:
    out = []
    for name, fn in CHECKS.items():
        try:
            ok, detail = fn()
        except Exception as exc:  # report, don't abort the suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))
    return out
