import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from disttomo import presets as P
from disttomo.eps import (
    E_map,
    EPSInstance,
    ExpBasis,
    assemble_eps,
    beta,
    block_constant_point,
    build_T,
    closed_form_det_W,
    compositions,
    det_T_closed_form,
    eps_jacobian,
    eval_h_expansion,
    eval_product_form,
    expansion_residual,
    g_poly,
    gamma,
    h_poly,
    h_table,
    high_precision_det,
    is_block_symmetric,
    lambda_fn,
    ordering_sign,
)
from disttomo.gh import gh_mgf
from disttomo.mgf import c_vector, exact_path_mgf

B = ExpBasis((5.0, 3.0, 1.0))
F = Fraction


def mono(*idx, n=6):
    m = [0] * n
    for i in idx:
        m[i] += 1
    return tuple(m)


# block-major variable index for d=2: x_jk -> 2(j-1) + (k-1)
def x(j, k):
    return 2 * (j - 1) + (k - 1)


def test_lambda_fn():
    assert lambda_fn(B, 1, 5.0) == 2.0
    assert lambda_fn(B, 2, 1e-12) == pytest.approx(0.0, abs=1e-11)


def test_beta_values():
    assert beta(B, 1, 2) == 5
    assert beta(B, 2, 1) == -6
    assert beta(B, 1, 1) == 1


def test_gamma_two_factor_identity():
    assert gamma(B, 1, 1, (1, 1)) == beta(B, 1, 2)
    assert gamma(B, 2, 1, (1, 1)) == beta(B, 2, 1)


def test_gamma_three_factor_identity():
    b12, b21 = beta(B, 1, 2), beta(B, 2, 1)
    assert gamma(B, 1, 2, (2, 1)) == b12
    assert gamma(B, 1, 1, (2, 1)) == b12 * b21
    assert gamma(B, 2, 1, (2, 1)) == b21**2


def test_gamma_rejects_stage_outside_support():
    with pytest.raises(ValueError):
        gamma(B, 2, 1, (2, 0))


def test_expansion_two_factor_float():
    rng = np.random.default_rng(0)
    for t in rng.uniform(0.01, 20, 20):
        assert expansion_residual(B, (1, 1), t) < 1e-12


def test_expansion_single_stage_exact_zero():
    assert expansion_residual(B, (3, 0), 0.7) == 0.0
    assert expansion_residual(B, (0, 2), 2.5) == 0.0


def test_expansion_random_exact():
    rng = np.random.default_rng(1)
    for _ in range(100):
        d = int(rng.integers(1, 5))
        rates = tuple(float(v) for v in rng.choice(np.arange(1, 40) / 4, d + 1, replace=False))
        omega = [0] * d
        for _ in range(int(rng.integers(1, 7))):
            omega[int(rng.integers(d))] += 1
        assert expansion_residual(ExpBasis(rates), omega, float(rng.uniform(0.05, 10)), exact=True) < 1e-9


def test_compositions():
    comps = list(compositions(2, 3))
    assert comps[0] == (2, 0, 0)
    assert len(comps) == math.comb(4, 2)
    assert all(sum(c) == 2 for c in comps)


def test_g_poly_examples():
    assert g_poly((3, 0, 0), 3) == {mono(x(1, 1), x(2, 1), x(3, 1)): 1}
    assert g_poly((2, 0, 1), 3) == {
        mono(x(1, 1), x(2, 1)): 1,
        mono(x(1, 1), x(3, 1)): 1,
        mono(x(2, 1), x(3, 1)): 1,
    }
    assert g_poly((0, 0, 3), 3) == {(0,) * 6: 1}


def test_h13_and_h12_three_links():
    assert h_poly(B, 3, 1, 3) == {mono(x(1, 1), x(2, 1), x(3, 1)): 1}
    b12 = F(5)
    expected = {
        mono(x(1, 1), x(2, 1)): F(1),
        mono(x(1, 1), x(3, 1)): F(1),
        mono(x(2, 1), x(3, 1)): F(1),
        mono(x(1, 1), x(2, 1), x(3, 2)): b12,
        mono(x(1, 1), x(2, 2), x(3, 1)): b12,
        mono(x(1, 2), x(2, 1), x(3, 1)): b12,
    }
    assert h_poly(B, 3, 1, 2) == expected


def test_h11_three_links():
    b12, b21 = F(5), F(-6)
    expected = {mono(x(j, 1)): F(1) for j in (1, 2, 3)}
    for m in ((1, 1, 2, 1, 3, 2), (1, 1, 2, 2, 3, 1), (1, 2, 2, 1, 3, 1)):
        expected[mono(x(m[0], m[1]), x(m[2], m[3]), x(m[4], m[5]))] = b12 * b21
    for m in ((1, 1, 2, 2, 3, 2), (1, 2, 2, 1, 3, 2), (1, 2, 2, 2, 3, 1)):
        expected[mono(x(m[0], m[1]), x(m[2], m[3]), x(m[4], m[5]))] = b12**2
    for a, b in (((1, 1), (2, 2)), ((1, 1), (3, 2)), ((1, 2), (2, 1)), ((2, 1), (3, 2)), ((1, 2), (3, 1)), ((2, 2), (3, 1))):
        expected[mono(x(*a), x(*b))] = b12
    assert h_poly(B, 3, 1, 1) == expected


def test_E_two_links_exact():
    t = h_table(B, 2)
    n = 4
    assert t[(1, 1)] == {mono(0, n=n): 1, mono(2, n=n): 1, mono(0, 3, n=n): 5, mono(1, 2, n=n): 5}
    assert t[(1, 2)] == {mono(0, 2, n=n): 1}
    assert t[(2, 1)] == {mono(1, n=n): 1, mono(3, n=n): 1, mono(0, 3, n=n): -6, mono(1, 2, n=n): -6}
    assert t[(2, 2)] == {mono(1, 3, n=n): 1}


def test_h_table_block_symmetric():
    for n in (2, 3):
        for poly in h_table(B, n).values():
            assert is_block_symmetric(poly, n, 2)


def test_build_T_nonsingular(basis):
    rng = np.random.default_rng(2)
    for _ in range(10):
        tau = rng.uniform(0.1, 10, 4)
        T = build_T(basis, tau, 2)
        closed = det_T_closed_form(basis, tau, 2)
        assert closed != 0
        assert high_precision_det(T) == pytest.approx(closed, rel=1e-8)


def test_build_T_rejects_duplicates(basis):
    with pytest.raises(ValueError):
        build_T(basis, [1.0, 1.0, 2.0, 3.0], 2)


def test_assemble_eps_ideal_target(basis, tree_truth):
    models = [P.tree_models()[j] for j in P.TREE.path(0)]
    est = c_vector(exact_path_mgf(models), P.TREE_TAU[0], 2, basis.pivot, d=2)
    inst = assemble_eps(basis, 2, est.tau, est.c_hat)
    w = tree_truth[[0, 1]].ravel()
    assert np.allclose(inst.target, E_map(basis, 2, w).real, rtol=0, atol=1e-8)


def test_assemble_eps_tau_independent(basis):
    models = [P.tree_models()[j] for j in P.TREE.path(1)]
    mgf = exact_path_mgf(models)
    rng = np.random.default_rng(3)
    targets = []
    for _ in range(3):
        tau = np.sort(rng.uniform(0.2, 8, 4))
        est = c_vector(mgf, tau, 2, basis.pivot, d=2)
        targets.append(assemble_eps(basis, 2, tau, est.c_hat).target)
    assert np.max(np.abs(targets[0] - targets[1])) <= 1e-8
    assert np.max(np.abs(targets[0] - targets[2])) <= 1e-8


def test_assemble_eps_single_link_linear(basis):
    m = P.tree_models()[2]
    est = c_vector(exact_path_mgf([m]), [0.5, 4.0], 1, basis.pivot, d=2)
    inst = assemble_eps(basis, 1, est.tau, est.c_hat)
    assert np.allclose(inst.target, m.weights[:2], atol=1e-12)


def test_jacobian_one_stage():
    b = ExpBasis((2.0, 1.0))
    inst = EPSInstance(b, 2, np.zeros(2))
    assert np.linalg.det(eps_jacobian(inst, [1.0, 2.0])) == pytest.approx(-1.0)


def test_jacobian_three_links_two_stages():
    inst = EPSInstance(B, 3, np.zeros(6))
    p = block_constant_point([1, 2, 4], 2)
    stage = np.linalg.det(eps_jacobian(inst, p, order="stage"))
    block = np.linalg.det(eps_jacobian(inst, p))
    assert stage.real == pytest.approx(36.0, rel=1e-10)
    # block-major unknowns differ from stage-major by a column permutation
    assert ordering_sign(2, 3) == -1
    assert block.real == pytest.approx(-36.0, rel=1e-10)


def test_jacobian_equal_blocks_singular():
    inst = EPSInstance(B, 3, np.zeros(6))
    J = eps_jacobian(inst, block_constant_point([1.5, 1.5, 0.3], 2))
    assert abs(np.linalg.det(J)) < 1e-10


def test_det_W_two_by_two():
    closed, numeric = closed_form_det_W([1, 1], [2.0, 1.0], [1.0, 2.0])
    assert closed == pytest.approx(-1 / 72, rel=1e-12)
    assert numeric == pytest.approx(closed, rel=1e-12)


def test_det_W_equal_t_zero():
    closed, _ = closed_form_det_W([2, 1], [2.0, 1.0], [0.5, 0.5, 3.0])
    assert closed == 0.0


def test_det_W_confluent():
    rng = np.random.default_rng(4)
    lam = rng.uniform(0.5, 6, 3)
    ts = np.sort(rng.uniform(0.1, 5, 4))
    closed, numeric = closed_form_det_W([2, 1, 1], lam, ts)
    assert numeric == pytest.approx(closed, rel=1e-8)


def test_product_form_at_zero(basis):
    assert eval_product_form(basis, 3, np.zeros(6), 1.3) == pytest.approx(basis.pivot**3)


def test_product_form_equals_mgf_product(basis, tree_truth):
    w = tree_truth[[0, 1]].ravel()
    models = [P.tree_models()[j] for j in (0, 1)]
    for t in (0.3, 2.0, 7.5):
        mu = np.prod([gh_mgf(m, t) for m in models]) * (basis.pivot + t) ** 2
        assert eval_product_form(basis, 2, w, t) == pytest.approx(mu, rel=1e-12)


def test_eps_json_roundtrip(basis):
    inst = EPSInstance(basis, 2, np.arange(4.0), tau=np.array([1.0, 2, 3, 4]), path_id=1)
    back = EPSInstance.from_json(inst.to_json())
    assert np.array_equal(back.target, inst.target) and back.path_id == 1


representation_cases = st.tuples(
    st.integers(1, 3),
    st.integers(1, 4),
    st.integers(0, 2**32 - 1),
)


@settings(max_examples=200, deadline=None)
@given(representation_cases)
def test_property_representation_equivalence(case):
    d, n, seed = case
    rng = np.random.default_rng(seed)
    # decreasing rates with the pivot smallest keep every term positive
    rates = tuple(sorted(rng.choice(np.arange(2, 41) / 4, d, replace=False), reverse=True)) + (0.25,)
    basis = ExpBasis(rates)
    xs = rng.uniform(0, 1, d * n)
    t = float(rng.uniform(0.05, 10))
    a, b = eval_product_form(basis, n, xs, t), eval_h_expansion(basis, n, xs, t)
    assert abs(a - b) <= 1e-10 * abs(a)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(2, 4), st.integers(0, 2**32 - 1))
def test_property_jacobian_block_constant(d, n, seed):
    rng = np.random.default_rng(seed)
    # rates on a 0.5 lattice; near-equal rates make J too ill-conditioned for float entries
    rates = tuple(float(v) for v in rng.choice(np.arange(1, 17) / 2, d + 1, replace=False))
    inst = EPSInstance(ExpBasis(rates), n, np.zeros(d * n))
    a = rng.normal(size=n) + 1j * rng.normal(size=n)
    numeric = np.linalg.det(eps_jacobian(inst, block_constant_point(a, d), order="stage"))
    closed = np.prod([(a[i] - a[j]) ** d for i, j in itertools.combinations(range(n), 2)])
    assert abs(numeric - closed) <= 1e-8 * abs(closed)
