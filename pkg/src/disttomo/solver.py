"""All complex roots of a square EPS by total-degree homotopy continuation.

Paths are tracked in projective space on a random affine chart so that
solutions escaping to infinity stay bounded; a random complex ``gamma``
keeps the homotopy regular for ``s < 1``.  Each step is an Euler predictor
followed by Newton correction with step halving on failure.  Finite
endpoints are sharpened by Newton on the affine target system.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .eps import CompiledSystem, EPSInstance

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Raised when a system cannot be solved within the configured budget."""


@dataclass
class SolverSettings:
    seed: int = 0
    max_paths: int = 4096
    h_init: float = 0.01
    h_max: float = 0.05
    h_min: float = 1e-6
    newton_iters: int = 3
    corrector_tol: float = 1e-9
    retries: int = 3
    infinity_tol: float = 1e-7
    stall_infinity_tol: float = 5e-2
    divergence_rate: float = 0.05
    max_steps: int = 100000
    max_drift: float = 1e-4
    endgame_drift: float = 5e-2
    sharpen_tol: float = 1e-12
    accept_tol: float = 1e-8
    merge_tol: float = 1e-8
    dedup_tol: float = 1e-6


@dataclass
class SolutionSet:
    """Roots of ``E(x) = u`` and their first-block representatives."""

    d: int
    n_links: int
    roots: np.ndarray  # (R, d*N) complex
    residuals: np.ndarray  # (R,)
    jacobian_dets: np.ndarray  # (R,) complex
    multiplicity: np.ndarray  # (R,) int, > 1 when endpoints merged
    quarantined: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), complex))
    n_paths: int = 0
    n_infinite: int = 0
    n_failed: int = 0
    attempts: int = 1
    path_id: int | None = None
    representatives: np.ndarray | None = None

    def blocks(self) -> np.ndarray:
        """Roots reshaped to ``(R, N, d)``."""
        return self.roots.reshape(len(self.roots), self.n_links, self.d)

    def to_json(self) -> dict:
        def cpairs(a):
            return [[float(z.real), float(z.imag)] for z in np.ravel(a)]

        reps = self.representatives if self.representatives is not None else first_block_set(self)
        return {
            "path_id": self.path_id,
            "d": self.d,
            "n_links": self.n_links,
            "n_paths": self.n_paths,
            "n_infinite": self.n_infinite,
            "n_failed": self.n_failed,
            "attempts": self.attempts,
            "roots": [
                {
                    "x": cpairs(r),
                    "residual": float(res),
                    "jacobian_det": [float(j.real), float(j.imag)],
                    "multiplicity": int(m),
                }
                for r, res, j, m in zip(self.roots, self.residuals, self.jacobian_dets, self.multiplicity)
            ],
            "quarantined": [cpairs(q) for q in self.quarantined],
            "representatives": [cpairs(a) for a in reps],
        }

    @classmethod
    def from_json(cls, data: dict) -> "SolutionSet":
        def carr(pairs):
            return np.array([complex(a, b) for a, b in pairs], dtype=complex)

        d, n = int(data["d"]), int(data["n_links"])
        roots = [carr(r["x"]) for r in data["roots"]]
        quarantined = [carr(q) for q in data.get("quarantined", [])]
        reps = data.get("representatives")
        return cls(
            d=d,
            n_links=n,
            roots=np.array(roots, dtype=complex).reshape(len(roots), d * n),
            residuals=np.array([r["residual"] for r in data["roots"]], dtype=float),
            jacobian_dets=np.array([complex(*r["jacobian_det"]) for r in data["roots"]], dtype=complex),
            multiplicity=np.array([r.get("multiplicity", 1) for r in data["roots"]], dtype=int),
            quarantined=np.array(quarantined, dtype=complex).reshape(len(quarantined), d * n),
            n_paths=int(data.get("n_paths", 0)),
            n_infinite=int(data.get("n_infinite", 0)),
            n_failed=int(data.get("n_failed", 0)),
            attempts=int(data.get("attempts", 1)),
            path_id=data.get("path_id"),
            representatives=None if reps is None else np.array([carr(a) for a in reps], dtype=complex).reshape(-1, d),
        )


class _Homogenized:
    """Target ``E(x) - u`` homogenized with ``x0`` plus the start system."""

    def __init__(self, system: CompiledSystem, target: np.ndarray):
        exps = system.exps
        coefs = system.coefs.copy()
        zero = np.where(~exps.any(axis=1))[0]
        if len(zero) == 0:
            exps = np.vstack([exps, np.zeros((1, exps.shape[1]), dtype=int)])
            coefs = np.vstack([coefs, np.zeros((1, coefs.shape[1]))])
            zero = [len(exps) - 1]
        coefs[zero[0]] -= target
        self.exps = exps
        self.n = exps.shape[1]
        self.degrees = np.array([max(system.degrees[e], 1) for e in range(coefs.shape[1])])
        x0pow = np.clip(self.degrees[None, :] - exps.sum(axis=1)[:, None], 0, None)
        # coefficient slices grouped by the power of x0 they carry
        self.x0_powers = np.unique(x0pow[coefs != 0])
        self.blocks = np.stack([np.where(x0pow == k, coefs, 0.0) for k in self.x0_powers]).astype(complex)
        self.max_exp = int(exps.max())
        K, T, E = self.blocks.shape
        self.flat = self.blocks.transpose(1, 0, 2).reshape(T, K * E)
        # derivative exponents: dexps[v] is exps with column v lowered by one
        dexps = np.repeat(exps[None], self.n, axis=0)
        for v in range(self.n):
            dexps[v, :, v] = np.maximum(exps[:, v] - 1, 0)
        self.dexps = dexps
        self.dcoef = exps.T.astype(float)  # (n, T)

    def _table(self, x: np.ndarray) -> np.ndarray:
        table = np.ones((x.shape[0], self.n, self.max_exp + 1), dtype=complex)
        for e in range(1, self.max_exp + 1):
            table[:, :, e] = table[:, :, e - 1] * x
        return table

    def target(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Values ``(P, E)`` and Jacobian ``(P, E, n + 1)`` in projective coordinates."""
        x0, x = X[:, 0], X[:, 1:]
        P = X.shape[0]
        K, T, E = self.blocks.shape
        table = self._table(x)
        var = np.arange(self.n)
        monos = np.prod(table[:, var[None, :], self.exps], axis=2)  # (P, T)
        dm = np.prod(table[:, var[None, None, :], self.dexps], axis=3) * self.dcoef[None]  # (P, n, T)
        pw = x0[:, None] ** self.x0_powers[None, :]
        dpw = self.x0_powers[None, :] * x0[:, None] ** np.maximum(self.x0_powers - 1, 0)[None, :]
        per_k = (monos @ self.flat).reshape(P, K, E)
        F = np.sum(pw[:, :, None] * per_k, axis=1)
        J = np.empty((P, E, self.n + 1), dtype=complex)
        J[:, :, 0] = np.sum(dpw[:, :, None] * per_k, axis=1)
        dk = (dm @ self.flat).reshape(P, self.n, K, E)
        J[:, :, 1:] = np.sum(pw[:, None, :, None] * dk, axis=2).transpose(0, 2, 1)
        return F, J

    def start(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        x0, x = X[:, 0], X[:, 1:]
        D = self.degrees
        G = x**D - x0[:, None] ** D[None, :]
        P = X.shape[0]
        J = np.zeros((P, self.n, self.n + 1), dtype=complex)
        J[:, :, 0] = -D[None, :] * x0[:, None] ** (D - 1)[None, :]
        idx = np.arange(self.n)
        J[:, idx, idx + 1] = D[None, :] * x ** (D - 1)[None, :]
        return G, J

    def start_solutions(self) -> np.ndarray:
        roots = [np.exp(2j * np.pi * np.arange(D) / D) for D in self.degrees]
        pts = np.array(list(itertools.product(*roots)), dtype=complex)
        return np.hstack([np.ones((len(pts), 1), dtype=complex), pts])


def _rel_x0(X: np.ndarray) -> np.ndarray:
    return np.abs(X[:, 0]) / np.linalg.norm(X, axis=1)


def _track(hom: _Homogenized, gamma: complex, patch: np.ndarray, settings: SolverSettings):
    """Track every start root; returns endpoints, final s, failure and divergence flags."""
    X = hom.start_solutions()
    X = X / (X @ patch)[:, None]
    P, m = X.shape
    s = np.zeros(P)
    h = np.full(P, settings.h_init)
    active = np.ones(P, dtype=bool)
    failed = np.zeros(P, dtype=bool)
    diverged = np.zeros(P, dtype=bool)
    # endgame checkpoints: (1 - s, |x0|) recorded when 1 - s first drops below 10**-k
    n_marks = 16
    mark_gap = np.full((P, n_marks), np.nan)
    mark_rel = np.full((P, n_marks), np.nan)

    def system(Xb, sb):
        F, JF = hom.target(Xb)
        G, JG = hom.start(Xb)
        a = (1 - sb)[:, None] * gamma
        H = a * G + sb[:, None] * F
        J = a[:, :, None] * JG + sb[:, None, None] * JF
        Hs = F - gamma * G
        # chart row
        Hfull = np.concatenate([H, (Xb @ patch - 1)[:, None]], axis=1)
        Jfull = np.concatenate([J, np.broadcast_to(patch, (len(Xb), 1, m))], axis=1)
        Hs_full = np.concatenate([Hs, np.zeros((len(Xb), 1))], axis=1)
        return Hfull, Jfull, Hs_full

    def solve(J, rhs):
        with np.errstate(all="ignore"):
            try:
                return np.linalg.solve(J, rhs[..., None])[..., 0]
            except np.linalg.LinAlgError:
                out = np.full_like(rhs, np.nan)
                for i in range(len(J)):
                    try:
                        out[i] = np.linalg.solve(J[i], rhs[i])
                    except np.linalg.LinAlgError:
                        pass
                return out

    for _ in range(settings.max_steps):
        idx = np.where(active)[0]
        if len(idx) == 0:
            break
        Xa, sa = X[idx], s[idx]
        ha = np.minimum(h[idx], 1.0 - sa)
        _, J, Hs = system(Xa, sa)
        dX = -solve(J, Hs)
        s_new = sa + ha
        Y = Xa + ha[:, None] * dX
        ok = np.all(np.isfinite(Y), axis=1)
        prev = np.full(len(idx), np.inf)
        for _it in range(settings.newton_iters):
            H, J, _ = system(Y, s_new)
            step = solve(J, H)
            Y = Y - step
            norm = np.linalg.norm(step, axis=1) / np.maximum(np.linalg.norm(Y, axis=1), 1.0)
            ok &= np.isfinite(norm) & (norm < 0.5 * prev + 1e-14)
            prev = norm
        ok &= prev < settings.corrector_tol
        acc = idx[ok]
        rej = idx[~ok]
        X[acc] = Y[ok]
        s[acc] = s_new[ok]
        h[acc] = np.minimum(h[acc] * 1.5, settings.h_max)
        h[rej] = h[rej] * 0.5
        with np.errstate(divide="ignore"):
            decade = np.clip(np.floor(-np.log10(1.0 - s[acc])), 0, n_marks - 1).astype(int)
        new = np.isnan(mark_gap[acc, decade])
        if new.any():
            rows, cols = acc[new], decade[new]
            mark_gap[rows, cols] = 1.0 - s[rows]
            mark_rel[rows, cols] = _rel_x0(X[rows])
        far = acc[(s[acc] > 0.9) & (_rel_x0(X[acc]) <= settings.infinity_tol)]
        diverged[far] = True
        active[far] = False
        done = acc[s[acc] >= 1.0]
        active[done] = False
        tiny = rej[h[rej] < settings.h_min]
        failed[tiny] = True
        active[tiny] = False
    failed |= active
    # a stalled path whose |x0| keeps shrinking like a fractional power of 1 - s is diverging
    for i in np.where(failed & (s > 0.99))[0]:
        gap = 1.0 - s[i]
        far = np.where(mark_gap[i] >= 30 * gap)[0]
        if len(far) == 0:
            continue
        ref = far[-1]
        rel = _rel_x0(X[i : i + 1])[0]
        with np.errstate(all="ignore"):
            rate = np.log(mark_rel[i, ref] / rel) / np.log(mark_gap[i, ref] / gap)
        if rate > settings.divergence_rate and rel < settings.stall_infinity_tol:
            diverged[i] = True
            failed[i] = False
    return X, s, failed, diverged


def _sharpen(system: CompiledSystem, target: np.ndarray, x: np.ndarray, tol: float, iters: int = 30):
    x = x.astype(complex).copy()
    for _ in range(iters):
        r = system.evaluate(x)[0] - target
        J = system.jacobian(x)[0]
        try:
            dx = np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            break
        x = x - dx
        if np.linalg.norm(dx) <= tol * (1 + np.linalg.norm(x)):
            break
    r = system.evaluate(x)[0] - target
    return x, float(np.max(np.abs(r)))


def total_degree(instance: EPSInstance) -> int:
    return int(np.prod([max(D, 1) for D in instance.compiled.degrees]))


def _linear_solution(instance: EPSInstance) -> SolutionSet:
    # N = 1: every h_k1 is the single variable x_1k
    x = instance.target.astype(complex)
    system = instance.compiled
    res = float(np.max(np.abs(system.evaluate(x)[0] - instance.target)))
    jd = np.linalg.det(system.jacobian(x)[0])
    sol = SolutionSet(
        d=instance.d,
        n_links=1,
        roots=x[None, :],
        residuals=np.array([res]),
        jacobian_dets=np.array([jd]),
        multiplicity=np.array([1]),
        quarantined=np.zeros((0, instance.d), dtype=complex),
        n_paths=1,
        path_id=instance.path_id,
    )
    sol.representatives = first_block_set(sol)
    return sol


def _merge(roots: list[np.ndarray], tol: float) -> tuple[list[np.ndarray], list[int]]:
    out: list[np.ndarray] = []
    mult: list[int] = []
    for r in roots:
        for i, o in enumerate(out):
            if np.linalg.norm(r - o) <= tol * (1 + np.linalg.norm(o)):
                mult[i] += 1
                break
        else:
            out.append(r)
            mult.append(1)
    return out, mult


def _canonical_order(roots: np.ndarray) -> np.ndarray:
    keys = [tuple(np.round(np.concatenate([r.real, r.imag]), 10)) for r in roots]
    return np.array(sorted(range(len(roots)), key=lambda i: keys[i]), dtype=int)


def solve_square_system(instance: EPSInstance, settings: SolverSettings | None = None) -> SolutionSet:
    """Find all isolated complex roots of ``E(x) = u`` for one path."""
    settings = settings or SolverSettings()
    if instance.n_links == 1:
        return _linear_solution(instance)
    n_paths = total_degree(instance)
    if n_paths > settings.max_paths:
        raise SolverError(f"total degree {n_paths} exceeds path cap {settings.max_paths}")
    system = instance.compiled
    target = instance.target
    hom = _Homogenized(system, target)
    rng = np.random.default_rng(settings.seed)
    scale = 1 + np.linalg.norm(target)

    merged: list[np.ndarray] = []
    mult: list[int] = []
    quarantine: list[np.ndarray] = []
    n_inf = n_fail = 0
    attempt = 0
    for attempt in range(1, settings.retries + 2):
        gamma = np.exp(2j * np.pi * rng.uniform())
        patch = rng.normal(size=hom.n + 1) + 1j * rng.normal(size=hom.n + 1)
        patch /= np.linalg.norm(patch)
        X, s, failed, diverged = _track(hom, gamma, patch, settings)
        n_inf = n_fail = 0
        quarantine = []
        run_roots: list[np.ndarray] = []
        for Xi, si, fi, di in zip(X, s, failed, diverged):
            rel_x0 = abs(Xi[0]) / np.linalg.norm(Xi)
            if di or rel_x0 <= settings.infinity_tol:
                n_inf += 1
                continue
            endpoint = Xi[1:] / Xi[0]
            x, res = _sharpen(system, target, endpoint, settings.sharpen_tol)
            drift = np.linalg.norm(x - endpoint) / (1 + np.linalg.norm(endpoint))
            limit = settings.endgame_drift if fi and si > 0.99 else settings.max_drift
            if res <= settings.accept_tol * scale and drift <= limit:
                run_roots.append(x)
            else:
                n_fail += 1
                quarantine.append(x if np.all(np.isfinite(x)) else endpoint)
        run_merged, run_mult = _merge(run_roots, settings.merge_tol)
        for r, m in zip(run_merged, run_mult):
            for i, o in enumerate(merged):
                if np.linalg.norm(r - o) <= settings.merge_tol * (1 + np.linalg.norm(o)):
                    mult[i] = max(mult[i], m)
                    break
            else:
                merged.append(r)
                mult.append(m)
        if n_fail == 0 and all(m == 1 for m in run_mult):
            break
        log.info("path %s attempt %d: %d failed, %d merged endpoints; retrying with fresh gamma",
                 instance.path_id, attempt, n_fail, sum(m - 1 for m in run_mult))

    roots = np.array(merged, dtype=complex).reshape(len(merged), instance.size)
    order = _canonical_order(roots) if len(roots) else np.zeros(0, dtype=int)
    roots = roots[order]
    mult_arr = np.array(mult, dtype=int)[order] if len(mult) else np.zeros(0, dtype=int)
    residuals = np.array([np.max(np.abs(system.evaluate(r)[0] - target)) for r in roots])
    jdets = np.array([np.linalg.det(system.jacobian(r)[0]) for r in roots], dtype=complex)
    sol = SolutionSet(
        d=instance.d,
        n_links=instance.n_links,
        roots=roots,
        residuals=residuals,
        jacobian_dets=jdets,
        multiplicity=mult_arr,
        quarantined=np.array(quarantine, dtype=complex).reshape(len(quarantine), instance.size),
        n_paths=n_paths,
        n_infinite=n_inf,
        n_failed=n_fail,
        attempts=attempt,
        path_id=instance.path_id,
    )
    sol.representatives = first_block_set(sol, settings.dedup_tol)
    return sol


class ClusteringAmbiguity(ValueError):
    pass


def first_block_set(solutions: SolutionSet, dedup_tol: float = 1e-6, check: bool = False) -> np.ndarray:
    """Distinct first blocks of the roots, clustered at ``dedup_tol``."""
    if len(solutions.roots) == 0:
        return np.zeros((0, solutions.d), dtype=complex)
    firsts = solutions.blocks()[:, 0, :]
    reps: list[np.ndarray] = []
    members: list[list[np.ndarray]] = []
    for a in firsts:
        for i, r in enumerate(reps):
            if np.linalg.norm(a - r) <= dedup_tol:
                members[i].append(a)
                break
        else:
            reps.append(a)
            members.append([a])
    reps_arr = np.array([np.mean(m, axis=0) for m in members], dtype=complex)
    if check and len(reps_arr) > 1:
        dist = np.linalg.norm(reps_arr[:, None] - reps_arr[None], axis=2)
        np.fill_diagonal(dist, np.inf)
        if dist.min() < 2 * dedup_tol:
            raise ClusteringAmbiguity(f"representatives {dist.min():.3g} apart, below 2*dedup_tol")
    order = _canonical_order(reps_arr)
    return reps_arr[order]


def permutation_closure_gap(solutions: SolutionSet) -> float:
    """Largest distance from a block-permuted root to its nearest stored root."""
    worst = 0.0
    blocks = solutions.blocks()
    for root in blocks:
        for sigma in itertools.permutations(range(solutions.n_links)):
            img = root[list(sigma)].reshape(-1)
            worst = max(worst, float(np.min(np.linalg.norm(solutions.roots - img, axis=1))))
    return worst


def orbit_count(solutions: SolutionSet) -> float:
    return len(solutions.roots) / math.factorial(solutions.n_links)
