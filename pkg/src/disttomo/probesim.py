"""Unicast probe simulator: independent end-to-end delay samples per path."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .gh import GHModel, check, sample_with
from .topology import PathLinkMatrix

DEFAULT_L = 1_000_000
HEADER_PREFIX = "# disttomo-samples"


@dataclass
class ProbeSampleSet:
    samples: list[np.ndarray]
    seed: int
    path_ids: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.path_ids:
            self.path_ids = list(range(len(self.samples)))

    @property
    def counts(self) -> list[int]:
        return [len(s) for s in self.samples]


def path_streams(seed: int, n_paths: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n_paths)


def simulate_path(models: Sequence[GHModel], L: int, stream: np.random.SeedSequence) -> np.ndarray:
    """``L`` draws of a sum of independent link delays, one substream per link."""
    out = np.zeros(L)
    for k, model in enumerate(models):
        # explicit child keys: spawn() would mutate the parent and break purity
        child = np.random.SeedSequence(stream.entropy, spawn_key=stream.spawn_key + (k,))
        out += sample_with(model, np.random.default_rng(child), L)
    return out


def simulate_paths(A: PathLinkMatrix, models: Sequence[GHModel], L, seed: int) -> ProbeSampleSet:
    """Per-path samples ``Y_i = sum_{j in p_i} X_j`` with fresh link draws everywhere."""
    if len(models) != A.N:
        raise ValueError(f"{len(models)} link models for {A.N} links")
    for j, model in enumerate(models):
        try:
            check(model)
        except ValueError as exc:
            raise ValueError(f"link {j}: {exc}") from None
    counts = [int(L)] * A.m if np.isscalar(L) else [int(x) for x in L]
    if len(counts) != A.m or any(c < 1 for c in counts):
        raise ValueError("need one positive sample count per path")
    streams = path_streams(seed, A.m)
    samples = [
        simulate_path([models[j] for j in A.path(i)], counts[i], streams[i])
        for i in range(A.m)
    ]
    return ProbeSampleSet(samples, seed)


def write_samples(path: str | Path, samples: np.ndarray, path_id: int, seed: int) -> None:
    path = Path(path)
    header = f"{HEADER_PREFIX} path_id={path_id} L={len(samples)} seed={seed}"
    np.savetxt(path, samples, fmt="%.17g", header=header[2:], comments="# ")


def read_samples(path: str | Path) -> tuple[np.ndarray, dict]:
    """Samples plus header metadata (``path_id``, ``L``, ``seed``)."""
    path = Path(path)
    meta: dict = {}
    with path.open() as fh:
        first = fh.readline().strip()
        if not first.startswith(HEADER_PREFIX):
            raise ValueError(f"{path}:1: missing sample-file header")
        for tok in first[len(HEADER_PREFIX):].split():
            key, _, value = tok.partition("=")
            meta[key] = int(value)
        try:
            data = np.loadtxt(fh, dtype=float, ndmin=1)
        except ValueError as exc:
            raise ValueError(f"{path}: {exc}") from None
    if "L" in meta and len(data) != meta["L"]:
        raise ValueError(f"{path}: header says L={meta['L']} but found {len(data)} rows")
    if np.any(data < 0):
        line = int(np.argmax(data < 0)) + 2
        raise ValueError(f"{path}:{line}: negative delay")
    return data, meta
