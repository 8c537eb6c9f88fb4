"""Batch command line: simulate, estimate, solve, match, report, selftest.

Every stage reads the run configuration and hands its results to the next
stage through files in the output directory.  A manifest records the
config hash, seed and the sha256 of every file written.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import expmean as em
from .eps import EPSInstance, ExpBasis, assemble_eps
from .gh import GHModel, InversionError, check
from .matcher import MatchError, MatchReport, error_norm, format_table, match_links
from .mgf import TauError, c_vector, default_tau, exact_path_mgf, load_tau, save_tau
from .pipeline import solve_all
from .probesim import read_samples, simulate_paths, write_samples
from .refine import path_statistics, refine_network, statistics_grid
from .solver import SolutionSet, SolverError, SolverSettings
from .topology import PathLinkMatrix

log = logging.getLogger("disttomo")

SCHEMA_VERSION = 1
MODES = ("gh", "expmean", "ideal-gh")
EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


class NumericFailure(RuntimeError):
    pass


@dataclass
class RunConfig:
    topology: PathLinkMatrix
    mode: str
    seed: int
    L: list[int]
    out: Path
    basis_rates: tuple[float, ...] | None = None
    links: list[GHModel] | None = None
    means: list[float] | None = None
    truth: np.ndarray | None = None
    tau_seed: int = 0
    tau_grids: list[np.ndarray] | None = None
    delta: float | None = None
    refine: bool | None = None
    workers: int = 1
    raw: dict = field(default_factory=dict)

    @property
    def ideal(self) -> bool:
        return self.mode == "ideal-gh"

    @property
    def gh(self) -> bool:
        return self.mode in ("gh", "ideal-gh")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()


def _topology(spec: Any, base: Path) -> PathLinkMatrix:
    if not isinstance(spec, dict):
        raise ConfigError("topology must be an object")
    if "file" in spec:
        return PathLinkMatrix.load(base / spec["file"])
    if "matrix" in spec:
        return PathLinkMatrix(tuple(tuple(int(v) for v in row) for row in spec["matrix"]))
    if "paths" in spec:
        if not spec["paths"]:
            raise ConfigError("topology has an empty path list")
        return PathLinkMatrix.from_paths(spec["paths"], int(spec["num_links"]))
    raise ConfigError("topology needs one of 'file', 'matrix' or 'paths'")


def load_config(path: str | Path, args: argparse.Namespace | None = None) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: no such config file") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"{path}: schema_version must be {SCHEMA_VERSION}, got {raw.get('schema_version')!r}")
    # command-line overrides take part in the config hash
    if args is not None:
        for key in ("mode", "seed", "delta", "out"):
            value = getattr(args, key, None)
            if value is not None:
                raw[key] = value
        if getattr(args, "ideal", False):
            raw["mode"] = "ideal-gh" if raw.get("mode", "gh") == "gh" else raw.get("mode")
            raw["ideal"] = True
        if getattr(args, "tau_file", None):
            raw["tau_file"] = str(args.tau_file)
    try:
        return _parse(raw, path.parent)
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: bad or missing field {exc}") from None
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse(raw: dict, base: Path) -> RunConfig:
    mode = raw.get("mode", "gh")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    A = _topology(raw["topology"], base)
    L = raw.get("L", 1_000_000)
    L = [int(L)] * A.m if np.isscalar(L) else [int(x) for x in L]
    if len(L) != A.m or min(L) < 1:
        raise ConfigError("L must be a positive count or one per path")
    cfg = RunConfig(A, mode, int(raw.get("seed", 0)), L, Path(raw.get("out", "out")), raw=raw)
    tau = raw.get("tau") or {}
    cfg.tau_seed = int(tau.get("seed", 0))
    if raw.get("tau_file"):
        cfg.tau_grids = load_tau(raw["tau_file"], A.m)
    elif tau.get("grids") is not None:
        grids = tau["grids"]
        if grids and all(isinstance(x, (int, float)) for x in grids):
            grids = [grids] * A.m
        cfg.tau_grids = [np.asarray(g, dtype=float) for g in grids]
        if len(cfg.tau_grids) != A.m:
            raise ConfigError(f"{len(cfg.tau_grids)} tau grids for {A.m} paths")
    cfg.delta = None if raw.get("delta") is None else float(raw["delta"])
    if cfg.delta is not None and not cfg.delta > 0:
        raise ConfigError("delta must be positive")
    cfg.refine = raw.get("refine")
    cfg.workers = int(raw.get("workers", 1))
    links = raw.get("links")
    if cfg.gh:
        cfg.basis_rates = tuple(float(r) for r in raw["basis_rates"])
        ExpBasis(cfg.basis_rates)
        if links is not None:
            if len(links) != A.N:
                raise ConfigError(f"{len(links)} link models for {A.N} links")
            cfg.links = []
            for j, spec in enumerate(links):
                rates = tuple(float(r) for r in spec.get("rates", cfg.basis_rates))
                try:
                    model = GHModel(rates, tuple(float(w) for w in spec["weights"]))
                    check(model)
                except ValueError as exc:
                    raise ConfigError(f"link {j}: {exc}") from None
                cfg.links.append(model)
        d = len(cfg.basis_rates) - 1
        if raw.get("truth") is not None:
            cfg.truth = np.asarray(raw["truth"], dtype=float).reshape(A.N, d)
        elif cfg.links and all(m.rates == cfg.basis_rates for m in cfg.links):
            cfg.truth = np.array([m.weights[:d] for m in cfg.links])
    else:
        if links is not None:
            if len(links) != A.N:
                raise ConfigError(f"{len(links)} link means for {A.N} links")
            cfg.means = [float(spec["mean"]) for spec in links]
            if min(cfg.means) <= 0:
                raise ConfigError("exponential means must be positive")
        if raw.get("truth") is not None:
            cfg.truth = np.asarray(raw["truth"], dtype=float).reshape(A.N, 1)
        elif cfg.means:
            cfg.truth = np.asarray(cfg.means).reshape(A.N, 1)
    if cfg.ideal and cfg.links is None:
        raise ConfigError("ideal mode needs the link models")
    if raw.get("ideal") and mode == "expmean" and cfg.means is None:
        raise ConfigError("ideal expmean needs the link means")
    return cfg


# -- file handoffs ---------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")


def _record(cfg: RunConfig, *files: Path) -> None:
    """Add files to the manifest; no timestamps so reruns are byte-identical."""
    mpath = cfg.out / "manifest.json"
    manifest = json.loads(mpath.read_text()) if mpath.exists() else {}
    if manifest.get("config_sha256") != cfg.digest():
        manifest = {}
    manifest.update({
        "schema_version": SCHEMA_VERSION,
        "config_sha256": cfg.digest(),
        "mode": cfg.mode,
        "seed": cfg.seed,
        "L": cfg.L,
    })
    entries = manifest.setdefault("files", {})
    for f in files:
        entries[str(f.relative_to(cfg.out))] = _sha256(f)
    _write_json(mpath, manifest)


def _read_json(path: Path, what: str):
    if not path.exists():
        raise ConfigError(f"{path}: missing {what} file (run the earlier stage first)")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from None


def _sample_path(cfg: RunConfig, i: int) -> Path:
    return cfg.out / "samples" / f"path_{i}.txt"


def _load_samples(cfg: RunConfig) -> list[np.ndarray]:
    out = []
    for i in range(cfg.topology.m):
        p = _sample_path(cfg, i)
        if not p.exists():
            raise ConfigError(f"{p}: missing sample file (run simulate first)")
        data, _ = read_samples(p)
        out.append(data)
    return out


def _sources(cfg: RunConfig):
    A = cfg.topology
    if cfg.ideal:
        return [exact_path_mgf([cfg.links[j] for j in A.path(i)]) for i in range(A.m)]
    if cfg.mode == "expmean" and cfg.raw.get("ideal"):
        return [em.exp_path_mgf([cfg.means[j] for j in A.path(i)]) for i in range(A.m)]
    return _load_samples(cfg)


# -- subcommands -----------------------------------------------------------

def cmd_simulate(cfg: RunConfig) -> list[Path]:
    A = cfg.topology
    if cfg.gh:
        if cfg.links is None:
            raise ConfigError("simulate needs link models")
        samples = simulate_paths(A, cfg.links, cfg.L, cfg.seed).samples
    else:
        if cfg.means is None:
            raise ConfigError("simulate needs link means")
        models = [GHModel((1.0 / m,), (1.0,)) for m in cfg.means]
        samples = simulate_paths(A, models, cfg.L, cfg.seed).samples
    files = []
    for i, y in enumerate(samples):
        p = _sample_path(cfg, i)
        p.parent.mkdir(parents=True, exist_ok=True)
        write_samples(p, y, i, cfg.seed)
        files.append(p)
    _record(cfg, *files)
    return files


def _taus(cfg: RunConfig) -> list[np.ndarray]:
    A = cfg.topology
    if cfg.tau_grids is not None:
        return cfg.tau_grids
    if cfg.gh:
        basis = ExpBasis(cfg.basis_rates)
        return [default_tau(basis, len(A.path(i)), seed=cfg.tau_seed + i) for i in range(A.m)]
    return [em.default_expmean_tau(len(A.path(i)), cfg.tau_seed + i) for i in range(A.m)]


def cmd_estimate(cfg: RunConfig) -> list[Path]:
    A = cfg.topology
    sources = _sources(cfg)
    taus = _taus(cfg)
    records = []
    for i, (src, tau) in enumerate(zip(sources, taus)):
        n = len(A.path(i))
        if cfg.gh:
            basis = ExpBasis(cfg.basis_rates)
            est = c_vector(src, tau, n, basis.pivot, d=basis.d)
            inst = assemble_eps(basis, n, est.tau, est.c_hat, path_id=i)
            rec = {k: v for k, v in inst.to_json().items() if k != "equations"}
            rec["mgf"] = est.values.tolist()
            rec["L"] = est.L
        else:
            inst = em.build_expmean_eps(src, tau, n, path_id=i)
            rec = {"path_id": i, "n_links": n, "tau": inst.tau.tolist(), "c": inst.c.tolist(),
                   "target": inst.target.tolist(), "L": inst.L}
        records.append(rec)
    tau_file = cfg.out / "tau.json"
    tau_file.parent.mkdir(parents=True, exist_ok=True)
    save_tau(tau_file, [r["tau"] for r in records])
    target_file = cfg.out / "targets.json"
    _write_json(target_file, {"mode": cfg.mode, "paths": records})
    _record(cfg, tau_file, target_file)
    return [tau_file, target_file]


def cmd_solve(cfg: RunConfig) -> list[Path]:
    data = _read_json(cfg.out / "targets.json", "targets")
    records = data["paths"]
    if len(records) != cfg.topology.m:
        raise ConfigError(f"targets file has {len(records)} paths for {cfg.topology.m}")
    if cfg.gh:
        instances = [EPSInstance.from_json(r) for r in records]
        try:
            solutions = solve_all(instances, SolverSettings(), cfg.workers)
        except SolverError as exc:
            raise NumericFailure(f"solve: {exc}") from None
    else:
        solutions = []
        for r in records:
            inst = em.ExpMeanInstance(r["n_links"], np.array(r["tau"]), np.array(r["c"]),
                                      np.array(r["target"]), r["path_id"], r["L"])
            solutions.append(em.solution_set(inst, em.solve_expmean(inst)))
    out = cfg.out / "solutions.json"
    _write_json(out, {"mode": cfg.mode, "paths": [s.to_json() for s in solutions]})
    _record(cfg, out)
    return [out]


def cmd_match(cfg: RunConfig) -> MatchReport:
    data = _read_json(cfg.out / "solutions.json", "solutions")
    solutions = [SolutionSet.from_json(s) for s in data["paths"]]
    A = cfg.topology
    rates = cfg.basis_rates if cfg.gh else None
    try:
        report = match_links(A, solutions, rates, cfg.delta)
    except MatchError as exc:
        raise NumericFailure(f"match: {exc}") from None
    sampled = cfg.mode == "gh"
    if cfg.gh and (cfg.refine if cfg.refine is not None else sampled):
        if not sampled:
            raise ConfigError("the joint fit needs sampled data, not ideal MGFs")
        grid = statistics_grid(cfg.basis_rates)
        stats = [path_statistics(y, grid) for y in _load_samples(cfg)]
        report.refined = refine_network(A, cfg.basis_rates, stats, solutions,
                                        report.estimates() if report.ok else None)
    if cfg.truth is not None:
        if report.refined is not None:
            report.algebraic_error_norm = error_norm(report, cfg.truth, algebraic=True)
        report.error_norm = error_norm(report, cfg.truth)
    out = cfg.out / "report.json"
    _write_json(out, report.to_json())
    _record(cfg, out)
    return report


def cmd_report(cfg: RunConfig) -> str:
    report = MatchReport.from_json(_read_json(cfg.out / "report.json", "report"))
    text = format_table(report, cfg.truth)
    out = cfg.out / "report.txt"
    out.write_text(text)
    _record(cfg, out)
    return text


def cmd_selftest() -> list[tuple[str, bool, str]]:
    from .selftest import run_all

    return run_all()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="disttomo", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("simulate", "estimate", "solve", "match", "report", "run"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, type=Path)
        s.add_argument("--mode", choices=MODES)
        s.add_argument("--seed", type=int)
        s.add_argument("--out", type=str)
        s.add_argument("--tau-file", type=Path)
        s.add_argument("--delta", type=float)
        s.add_argument("--ideal", action="store_true", help="use closed-form MGFs instead of samples")
    sub.add_parser("selftest")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "selftest":
            results = cmd_selftest()
            for name, ok, detail in results:
                print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")
            return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_NUMERIC
        cfg = load_config(args.config, args)
        steps = {
            "simulate": [cmd_simulate],
            "estimate": [cmd_estimate],
            "solve": [cmd_solve],
            "match": [cmd_match],
            "report": [cmd_report],
            "run": ([] if cfg.ideal or cfg.raw.get("ideal") else [cmd_simulate])
            + [cmd_estimate, cmd_solve, cmd_match, cmd_report],
        }[args.command]
        result = report = None
        for step in steps:
            log.info("%s ...", step.__name__[4:])
            result = step(cfg)
            if isinstance(result, MatchReport):
                report = result
        if isinstance(result, str):
            sys.stdout.write(result)
        elif isinstance(result, MatchReport):
            sys.stdout.write(format_table(result, cfg.truth))
        elif isinstance(result, list):
            for f in result:
                print(f)
        return EXIT_NUMERIC if report is not None and not report.usable else EXIT_OK
    except (NumericFailure, SolverError, TauError, InversionError, em.ExpMeanError, np.linalg.LinAlgError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
