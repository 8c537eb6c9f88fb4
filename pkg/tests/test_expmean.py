import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from disttomo import expmean as em
from disttomo import presets as P
from disttomo.topology import PathLinkMatrix

TREE_MEANS = [2.0, 0.5, 1.3]
GENERAL_MEANS = [2.0, 0.5, 1.3, 0.8]


def test_single_exponential():
    inst = em.build_expmean_eps(em.exp_path_mgf([2.0]), [0.7], 1)
    assert inst.target == pytest.approx([2.0], rel=1e-12)


def test_two_link_targets():
    # (1 + t)(1 + 3t) = 1 + 4t + 3t^2
    inst = em.build_expmean_eps(em.exp_path_mgf([1.0, 3.0]), [0.4, 1.1], 2)
    assert inst.target == pytest.approx([4.0, 3.0], rel=1e-12)


def test_factor_quadratic():
    inst = em.ExpMeanInstance(2, np.array([1.0, 2.0]), np.zeros(2), np.array([4.0, 3.0]))
    assert em.solve_expmean(inst) == pytest.approx([3.0, 1.0], rel=1e-12)


def test_complex_roots_strict():
    # z^2 - 2z + 5 has roots 1 +- 2i
    inst = em.ExpMeanInstance(2, np.array([1.0, 2.0]), np.zeros(2), np.array([2.0, 5.0]))
    with pytest.raises(em.ExpMeanError, match="complex"):
        em.solve_expmean(inst, strict=True)
    assert np.iscomplexobj(em.solve_expmean(inst))


def test_repeated_roots_strict():
    inst = em.ExpMeanInstance(2, np.array([1.0, 2.0]), np.zeros(2), np.array([4.0, 4.0]))
    with pytest.raises(em.ExpMeanError, match="repeated"):
        em.solve_expmean(inst, strict=True)


def test_mgf_underflow_rejected():
    with pytest.raises(em.ExpMeanError):
        em.build_expmean_eps(lambda t: 0.0, [1.0], 1)


def test_vandermonde_closed_form():
    t = [0.5, 1.2, 2.0]
    assert em.vandermonde_det(t) == pytest.approx(np.linalg.det(em.vandermonde(t)), rel=1e-12)


def test_ideal_tree():
    run = em.run_expmean(P.TREE, [em.exp_path_mgf([TREE_MEANS[j] for j in p]) for p in P.TREE.paths],
                         truth=TREE_MEANS)
    assert run.report.ok
    assert np.max(np.abs(run.report.estimates().ravel() - TREE_MEANS)) <= 1e-8


def test_ideal_general():
    run = em.run_expmean(P.GENERAL, [em.exp_path_mgf([GENERAL_MEANS[j] for j in p]) for p in P.GENERAL.paths],
                         truth=GENERAL_MEANS)
    assert run.report.ok
    assert run.report.error_norm <= 1e-8


def test_sampled_tree():
    rng = np.random.default_rng(0)
    L = 200_000
    samples = [sum(rng.exponential(TREE_MEANS[j], L) for j in p) for p in P.TREE.paths]
    run = em.run_expmean(P.TREE, samples, truth=TREE_MEANS)
    assert run.report.error_norm < 0.1


def test_solution_set_closed_under_permutation():
    inst = em.build_expmean_eps(em.exp_path_mgf([0.5, 1.0, 4.0]), [0.3, 0.9, 1.7], 3)
    sol = em.solution_set(inst, em.solve_expmean(inst))
    assert len(sol.roots) == 6
    assert np.max(sol.residuals) < 1e-9


def test_tau_independent_targets():
    mgf = em.exp_path_mgf([0.7, 2.2, 1.4])
    a = em.build_expmean_eps(mgf, [0.2, 0.8, 1.9], 3).target
    b = em.build_expmean_eps(mgf, [0.35, 1.1, 1.6], 3).target
    assert np.max(np.abs(a - b)) <= 1e-8


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.1, 4), min_size=2, max_size=5, unique=True))
def test_property_esym_jacobian(x):
    closed = em.esym_jacobian_det(x)
    if abs(closed) < 1e-12:
        return
    assert em.esym_jacobian_det_numeric(x) == pytest.approx(closed, rel=1e-10)
    assert np.linalg.det(em.esym_jacobian(x)) == pytest.approx(closed, rel=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.permutations([0.2, 0.8, 1.9, 2.6]))
def test_property_root_multiset_invariant_under_tau_order(tau):
    mgf = em.exp_path_mgf([0.7, 2.2, 1.4, 0.3])
    ref = em.solve_expmean(em.build_expmean_eps(mgf, [0.2, 0.8, 1.9, 2.6], 4))
    got = em.solve_expmean(em.build_expmean_eps(mgf, tau, 4))
    assert np.allclose(np.sort(got), np.sort(ref), rtol=1e-8)
