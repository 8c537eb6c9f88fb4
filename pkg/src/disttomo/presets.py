"""Reference topologies and link models used in the tests and example configs."""

from __future__ import annotations

from .gh import GHModel
from .topology import PathLinkMatrix

TREE = PathLinkMatrix(((1, 1, 0), (1, 0, 1)))
GENERAL = PathLinkMatrix(((1, 1, 0, 0), (1, 0, 1, 0), (0, 1, 0, 1)))

RATES = (5.0, 3.0, 1.0)

TREE_WEIGHTS = ((0.17, 0.80, 0.03), (0.13, 0.47, 0.40), (0.80, 0.15, 0.05))
TREE_TAU = ((1.9857, 2.3782, 0.3581, 8.8619), (0.0842, 0.0870, 0.0305, 0.0344))

GENERAL_WEIGHTS = ((0.34, 0.26, 0.40), (0.46, 0.49, 0.05), (0.12, 0.65, 0.23), (0.71, 0.19, 0.10))

# four-stage links whose third stage is negligible; estimated with that stage dropped
TRUNCATION_RATES = (5.0, 4.0, 0.005, 1.0)
TRUNCATION_FREE = ((0.71, 0.20, 0.0010), (0.41, 0.17, 0.0015), (0.15, 0.80, 0.0002))
TRUNCATION_ESTIMATION_RATES = (5.0, 4.0, 1.0)


def models(rates, weights) -> list[GHModel]:
    return [GHModel(tuple(rates), tuple(w)) for w in weights]


def free_weights(weights) -> list[tuple[float, ...]]:
    return [tuple(w[:-1]) for w in weights]


def truncation_models() -> list[GHModel]:
    """Generating models: the last weight completes each row to one."""
    return [GHModel.from_free_weights(TRUNCATION_RATES, w) for w in TRUNCATION_FREE]


def truncation_truth() -> list[tuple[float, float]]:
    """Free weights of the stages kept for estimation (rates 5 and 4)."""
    return [(w[0], w[1]) for w in TRUNCATION_FREE]


def tree_models() -> list[GHModel]:
    return models(RATES, TREE_WEIGHTS)


def general_models() -> list[GHModel]:
    return models(RATES, GENERAL_WEIGHTS)

