import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import make_instance
from gdm.baselines import fit_ridge, ridge_operator
from gdm.core import residualize
from gdm.errors import ValidationError
from gdm.inference import (
    DegenerateNullWarning,
    NullSpec,
    analytic_null,
    analytic_pvalues,
    bh_fdr,
    build_q_matrix,
    exceedance_pvalues,
    infer,
    linear_permutation_pvalues,
    permutation_pvalues,
    pvalue_agreement,
)
from gdm.solver import GdmHyperParams, dual_block, fit, fit_dual


def bh_brute_force(p, q):
    """Largest i with p_(i) <= i q / m, by scanning every candidate cut-off."""
    m = len(p)
    order = sorted(p)
    cut = None
    for i in range(1, m + 1):
        if order[i - 1] <= i * q / m:
            cut = order[i - 1]
    return np.array([cut is not None and v <= cut for v in p])


# --------------------------------------------------------------------------
# Q matrix


@pytest.mark.parametrize("shape", [(15, 4, 1), (10, 30, 2), (6, 2, 0)])
def test_q_reproduces_dual_solution(rng, shape):
    X, Y, C = make_instance(rng, *shape)
    h = GdmHyperParams(0.5, 2.0)
    q = build_q_matrix(X, Y, C, h)
    J = fit_dual(X, Y, C, h).J
    assert np.abs(q.Q @ Y - J).max() / (1 + np.abs(J).max()) < 1e-10
    np.testing.assert_allclose(q.Q @ C.matrix, 0.0, atol=1e-10)


def test_q_without_generator_is_centered_ridge(rng):
    X, Y, C = make_instance(rng, 12, 5, 0)
    q = build_q_matrix(X, Y, C, GdmHyperParams(1.5, 0.0))
    Xc = X - X.mean(axis=0)
    np.testing.assert_allclose(q.Q @ Y, fit_ridge(Xc, Y, 1.5).w, rtol=1e-10, atol=1e-13)


def test_q_with_zero_labels_gives_zero_parameters(rng):
    X, _, C = make_instance(rng, 8, 3, 1)
    q = build_q_matrix(X, np.zeros(8), C, GdmHyperParams(1, 1), check_labels=False)
    np.testing.assert_allclose(q.Q @ np.zeros(8), 0.0)
    assert q.scalar_s == 1.0


def _q_of_s(X, C, h, s):
    """Q written as a function of the scalar s alone."""
    n, k = C.n, C.k
    M = np.zeros((n + k, n + k))
    M[:n, :n] = -(X @ X.T) / s - np.eye(n) / h.lambda1
    M[:n, n:] = C.matrix
    M[n:, :n] = C.matrix.T
    N = np.linalg.inv(M)[:n, :n]
    XtR = residualize(C, X).T
    return (h.lambda2 * XtR - X.T @ N @ (np.eye(n) - h.lambda2 * X @ XtR / s)) / s


def test_q_depends_on_labels_only_through_s(rng):
    X, Y, C = make_instance(rng, 14, 5, 2)
    h = GdmHyperParams(0.7, 1.3)
    for _ in range(5):
        Yp = rng.permutation(Y)
        q = build_q_matrix(X, Yp, C, h)
        np.testing.assert_allclose(q.Q, _q_of_s(X, C, h, q.scalar_s), rtol=1e-9, atol=1e-12)
        _, s = dual_block(X, Yp, C, h)
        assert s == pytest.approx(q.scalar_s)


def test_q_is_permutation_invariant_with_intercept_only(rng):
    X, Y, C = make_instance(rng, 14, 5, 0)
    h = GdmHyperParams(0.7, 1.3)
    Q0 = build_q_matrix(X, Y, C, h).Q
    for _ in range(5):
        Q1 = build_q_matrix(X, rng.permutation(Y), C, h).Q
        np.testing.assert_allclose(Q1, Q0, rtol=1e-10, atol=1e-13)


# --------------------------------------------------------------------------
# analytic null and p-values


def test_null_sigma_is_row_norm(rng):
    X, Y, C = make_instance(rng, 10, 4, 1)
    q = build_q_matrix(X, Y, C, GdmHyperParams(1, 1))
    np.testing.assert_allclose(analytic_null(q).sigma, np.sqrt(np.sum(q.Q**2, axis=1)))
    assert analytic_null(q).mean == 0.0


def test_analytic_sigma_matches_exhaustive_refits_at_n6(rng):
    X, Y, C = make_instance(rng, 6, 3, 0)
    h = GdmHyperParams(1.0, 1.0)
    sigma = analytic_null(build_q_matrix(X, Y, C, h)).sigma
    Js = np.array([fit(X, Y[list(p)], C, h).J for p in itertools.permutations(range(6))])
    assert len(Js) == math.factorial(6)
    assert np.all(np.abs(sigma / Js.std(axis=0) - 1) <= 0.15)


def test_analytic_pvalues_known_values():
    p = analytic_pvalues(np.array([0.0, 1.96, -1.96, 3.0]), NullSpec(np.ones(4)))
    np.testing.assert_allclose(p, [1.0, 0.04999579, 0.04999579, 0.0026998], atol=1e-6)


def test_zero_sigma_with_nonzero_parameter_is_flagged():
    with pytest.warns(DegenerateNullWarning):
        p = analytic_pvalues(np.array([0.5, 0.0]), NullSpec(np.zeros(2)))
    np.testing.assert_array_equal(p, [0.0, 1.0])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        analytic_pvalues(np.zeros(2), np.zeros(2))


def test_null_validation():
    with pytest.raises(ValidationError, match="negative"):
        NullSpec(np.array([-1.0]))
    with pytest.raises(ValidationError, match="finite"):
        NullSpec(np.array([np.nan]))
    with pytest.raises(ValidationError, match="length"):
        analytic_pvalues(np.zeros(3), NullSpec(np.ones(2)))


# --------------------------------------------------------------------------
# permutation oracle


def test_exhaustive_mode_at_n5_equals_enumeration(rng):
    X, Y, C = make_instance(rng, 5, 3, 0)
    h = GdmHyperParams(1.0, 0.5)
    J = fit(X, Y, C, h).J
    Js = np.array([fit(X, Y[list(p)], C, h).J for p in itertools.permutations(range(5))])
    expected = np.mean(np.abs(Js) >= np.abs(J) * (1 - 1e-12), axis=0)
    p, stats = permutation_pvalues(X, Y, C, h, n_perm=120)
    assert stats.shape == (120, 3)
    np.testing.assert_allclose(p, expected, atol=1e-15)
    p_big, _ = permutation_pvalues(X, Y, C, h, n_perm=10_000, seed=3)
    np.testing.assert_array_equal(p_big, p)  # budget beyond n! stays exhaustive


def test_constant_labels_give_unit_pvalues(rng):
    X, _, C = make_instance(rng, 7, 3, 0)
    p, _ = permutation_pvalues(X, np.zeros(7), C, GdmHyperParams(1, 1), 50, check_labels=False)
    np.testing.assert_array_equal(p, 1.0)


def test_permutation_pvalues_are_seed_reproducible(rng):
    X, Y, C = make_instance(rng, 12, 4, 1)
    h = GdmHyperParams(1, 1)
    a, _ = permutation_pvalues(X, Y, C, h, 200, seed=11)
    b, _ = permutation_pvalues(X, Y, C, h, 200, seed=11)
    c, _ = permutation_pvalues(X, Y, C, h, 200, seed=12)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_threaded_refits_match_serial(rng):
    X, Y, C = make_instance(rng, 12, 4, 1)
    h = GdmHyperParams(1, 1)
    a, sa = permutation_pvalues(X, Y, C, h, 100, seed=5, n_jobs=1)
    b, sb = permutation_pvalues(X, Y, C, h, 100, seed=5, n_jobs=3)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(sa, sb)


def test_add_one_estimator_bounds(rng):
    X, Y, C = make_instance(rng, 20, 4, 0)
    p, _ = permutation_pvalues(X, Y, C, GdmHyperParams(1, 1), 99, seed=0, mode="fixed_Q")
    assert np.all(p >= 1 / 100) and np.all(p <= 1)
    assert np.allclose(p * 100, np.round(p * 100))


def test_fixed_q_agrees_with_gaussian_limit():
    rng = np.random.default_rng(8)
    X, Y, C = make_instance(rng, 60, 10, 1)
    h = GdmHyperParams(1.0, 1.0)
    J = fit(X, Y, C, h).J
    n_perm = 10_000
    p_perm, stats = permutation_pvalues(X, Y, C, h, n_perm, seed=1, mode="fixed_Q")
    sigma = analytic_null(build_q_matrix(X, Y, C, h)).sigma
    p_an = analytic_pvalues(J, NullSpec(sigma))
    assert np.mean(np.abs(p_perm - p_an)) < 2 / np.sqrt(n_perm)
    # law of large numbers for the fixed-Q distribution itself
    assert np.all(np.abs(stats.mean(axis=0)) < 0.05 * sigma)
    assert np.all(np.abs(stats.std(axis=0) / sigma - 1) < 0.05)


def test_permutation_argument_validation(rng):
    X, Y, C = make_instance(rng, 6, 2, 0)
    with pytest.raises(ValidationError, match="n_perm"):
        permutation_pvalues(X, Y, C, GdmHyperParams(1, 1), 0)
    with pytest.raises(ValidationError, match="mode"):
        permutation_pvalues(X, Y, C, GdmHyperParams(1, 1), 5, mode="sometimes")


def test_linear_permutations_match_fixed_operator_refits(rng):
    X, Y, C = make_instance(rng, 6, 3, 0)
    Xr = residualize(C, X)
    Q = ridge_operator(Xr, 1.0)
    p, stats = linear_permutation_pvalues(Q, Y, 720)
    W = np.array([fit_ridge(Xr, Y[list(s)], 1.0).w for s in itertools.permutations(range(6))])
    np.testing.assert_allclose(stats, W, rtol=1e-10, atol=1e-13)
    np.testing.assert_allclose(p, exceedance_pvalues(Q @ Y, W, exact=True))
    with pytest.raises(ValidationError, match="columns"):
        linear_permutation_pvalues(Q[:, :5], Y, 10)


# --------------------------------------------------------------------------
# BH-FDR


def test_bh_worked_example():
    np.testing.assert_array_equal(bh_fdr([0.01, 0.02, 0.04, 0.8], 0.05), [True, True, False, False])


def test_bh_edge_cases():
    assert not bh_fdr(np.ones(10), 0.05).any()
    assert bh_fdr([0.04], 0.05).tolist() == [True]
    np.testing.assert_array_equal(bh_fdr([0.03, 0.03, 0.03], 0.05), [True, True, True])
    with pytest.raises(ValidationError, match="at least one"):
        bh_fdr([], 0.05)
    with pytest.raises(ValidationError, match="q"):
        bh_fdr([0.1], 1.0)
    with pytest.raises(ValidationError, match=r"\[0, 1\]"):
        bh_fdr([1.2], 0.05)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=60), st.floats(0.001, 0.5))
def test_bh_matches_brute_force(p, q):
    np.testing.assert_array_equal(bh_fdr(p, q), bh_brute_force(p, q))


@given(
    st.lists(st.floats(0, 1), min_size=1, max_size=60),
    st.floats(0.001, 0.5),
    st.integers(0, 2**32 - 1),
)
def test_bh_is_monotone_under_pointwise_decrease(p, q, seed):
    p = np.array(p)
    r = np.random.default_rng(seed)
    lower = p * r.uniform(0, 1, p.size)
    before, after = bh_fdr(p, q), bh_fdr(lower, q)
    assert np.all(after[before])
    # any feature with a smaller p than a rejected one is rejected too
    if before.any():
        assert np.all(before[p <= p[before].max()])


def test_infer_bundles_result(rng):
    res = infer(np.array([5.0, 0.1]), NullSpec(np.ones(2)), q=0.05)
    assert res.method == "analytic" and res.q_level == 0.05
    np.testing.assert_array_equal(res.rejected, [True, False])


# --------------------------------------------------------------------------
# agreement curve


def test_agreement_identical_pvalues_have_zero_error():
    p = np.linspace(0.01, 1, 7)
    curve = pvalue_agreement(p, {10: p, 100: p})
    assert curve.mean_abs_error == (0.0, 0.0)
    assert curve.slope is None


def test_agreement_slope_of_inverse_sqrt_decay():
    base = np.full(20, 0.5)
    budgets = [10, 100, 1000, 10_000]
    perm = {b: base + 1 / np.sqrt(b) for b in budgets}
    curve = pvalue_agreement(base, perm)
    assert curve.budgets == tuple(budgets)
    assert curve.slope == pytest.approx(-0.5, abs=1e-10)


def test_agreement_rejects_mismatched_lengths():
    with pytest.raises(ValidationError, match="budget 10"):
        pvalue_agreement(np.ones(3), {10: np.ones(4)})
