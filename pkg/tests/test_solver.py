import numpy as np
import pytest

from disttomo import presets as P
from disttomo.eps import E_map, EPSInstance, ExpBasis
from disttomo.solver import (
    SolutionSet,
    SolverError,
    SolverSettings,
    first_block_set,
    orbit_count,
    permutation_closure_gap,
    solve_square_system,
    total_degree,
)

P1_IDEAL = [(0.1300, 0.4700), (0.1700, 0.8000), (3.8304, -2.8410), (0.1933, 0.7768), (0.1143, 0.4840), (0.0058, -0.1323)]
P2_IDEAL = [(0.8000, 0.1500), (0.1660, 0.7775), (5.5623, -4.5638), (0.1700, 0.8000), (0.8191, 0.1543), (0.0245, -0.0263)]


def ideal_instance(basis, free_blocks):
    x = np.asarray(free_blocks, dtype=float).ravel()
    return EPSInstance(basis, len(free_blocks), E_map(basis, len(free_blocks), x).real)


def assert_rows_match(reps, expected, tol):
    reps = np.asarray(reps)
    assert len(reps) == len(expected)
    for row in expected:
        gaps = np.max(np.abs(reps - np.asarray(row)), axis=1)
        assert gaps.min() <= tol, row


@pytest.fixture(scope="module")
def p1(basis, tree_truth):
    inst = ideal_instance(basis, tree_truth[[0, 1]])
    return inst, solve_square_system(inst)


def test_path1_solution_set(p1):
    _, sol = p1
    assert len(sol.roots) == 6
    assert_rows_match(first_block_set(sol), P1_IDEAL, 5e-4)


def test_path2_solution_set(basis, tree_truth):
    sol = solve_square_system(ideal_instance(basis, tree_truth[[0, 2]]))
    assert_rows_match(first_block_set(sol), P2_IDEAL, 5e-4)


def test_roots_verified(p1):
    inst, sol = p1
    assert np.all(sol.residuals <= 1e-8 * (1 + np.max(np.abs(inst.target))))
    assert sol.n_failed == 0
    assert np.all(sol.multiplicity == 1)


def test_permutation_closure(p1):
    _, sol = p1
    assert permutation_closure_gap(sol) <= 1e-6
    assert orbit_count(sol) == 3


def test_nonsingular_roots(p1):
    _, sol = p1
    assert np.all(np.abs(sol.jacobian_dets) > 1e-10)


def test_ground_truth_is_root(p1, tree_truth):
    _, sol = p1
    w = tree_truth[[0, 1]].ravel()
    assert np.min(np.linalg.norm(sol.roots - w, axis=1)) <= 1e-8


def test_perturbation_continuity(p1):
    inst, sol = p1
    rng = np.random.default_rng(0)
    noisy = EPSInstance(inst.basis, 2, inst.target + 1e-7 * rng.normal(size=4))
    moved = solve_square_system(noisy)
    assert len(moved.roots) == len(sol.roots)
    delta = 1e-3
    for r in sol.roots:
        assert np.sum(np.linalg.norm(moved.roots - r, axis=1) < delta) == 1


def test_linear_case(basis):
    inst = EPSInstance(basis, 1, np.array([0.3, 0.5]))
    sol = solve_square_system(inst)
    assert sol.roots.shape == (1, 2)
    assert np.allclose(sol.roots[0], [0.3, 0.5])


def test_single_orbit_collapses():
    sol = SolutionSet(
        d=1, n_links=2,
        roots=np.array([[1.0, 2.0], [2.0, 1.0]], dtype=complex),
        residuals=np.zeros(2), jacobian_dets=np.ones(2), multiplicity=np.ones(2, int),
    )
    assert len(first_block_set(sol)) == 2
    assert orbit_count(sol) == 1


def test_total_degree(basis):
    inst = EPSInstance(basis, 2, np.zeros(4))
    assert total_degree(inst) == 2 * 2 * 2 * 2


def test_path_cap(basis):
    with pytest.raises(SolverError):
        solve_square_system(EPSInstance(basis, 3, np.zeros(6)), SolverSettings(max_paths=10))


def test_solution_json_roundtrip(p1):
    _, sol = p1
    back = SolutionSet.from_json(sol.to_json())
    assert np.allclose(back.roots, sol.roots)
    assert np.allclose(back.representatives, sol.representatives)


def test_deterministic(p1):
    inst, sol = p1
    again = solve_square_system(inst)
    assert np.array_equal(again.roots, sol.roots)


def random_valid_free(rng, n):
    out = []
    for _ in range(n):
        w = rng.dirichlet(np.ones(3))
        out.append(w[:2])
    return np.array(out)


@pytest.mark.slow
def test_random_structure():
    basis = ExpBasis(P.RATES)
    rng = np.random.default_rng(11)
    for _ in range(5):
        sol = solve_square_system(ideal_instance(basis, random_valid_free(rng, 2)))
        assert len(sol.roots) % 2 == 0
        assert permutation_closure_gap(sol) <= 1e-6
        assert np.all(np.abs(sol.jacobian_dets) > 1e-10)
