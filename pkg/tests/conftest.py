import numpy as np
import pytest

from disttomo import presets as P
from disttomo.eps import ExpBasis
from disttomo.pipeline import ideal_sources, run_gh


@pytest.fixture(scope="session")
def basis():
    return ExpBasis(P.RATES)


@pytest.fixture(scope="session")
def tree_truth():
    return np.array(P.free_weights(P.TREE_WEIGHTS))


@pytest.fixture(scope="session")
def general_truth():
    return np.array(P.free_weights(P.GENERAL_WEIGHTS))


@pytest.fixture(scope="session")
def ideal_tree_run(basis, tree_truth):
    """Exact-MGF tree run on the reference grids."""
    return run_gh(P.TREE, basis, ideal_sources(P.TREE, P.tree_models()), taus=P.TREE_TAU, truth=tree_truth)


@pytest.fixture(scope="session")
def ideal_general_run(basis, general_truth):
    return run_gh(P.GENERAL, basis, ideal_sources(P.GENERAL, P.general_models()), truth=general_truth)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
