import itertools

import numpy as np
import pytest

from conftest import make_instance
from gdm.baselines import (
    RidgeModel,
    fit_ridge,
    haufe_null,
    haufe_operator,
    haufe_transform,
    ridge_null,
    ridge_operator,
    ridge_scores,
)
from gdm.core import apply_residualizer, build_covariate_basis, fit_residualizer, residualize, standardize_labels
from gdm.errors import ValidationError


def _cos(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def test_ridge_matches_textbook_formula(rng):
    X, Y, C = make_instance(rng, 15, 4, 0)
    Xr = residualize(C, X)
    w = fit_ridge(Xr, Y, 0.7).w
    ref = np.linalg.solve(np.eye(4) / 0.7 + Xr.T @ Xr, Xr.T @ Y)
    np.testing.assert_allclose(w, ref, rtol=1e-12)


@pytest.mark.parametrize("shape", [(20, 5), (8, 30)])
def test_ridge_primal_equals_dual(rng, shape):
    X, Y, C = make_instance(rng, *shape, 1)
    Xr = residualize(C, X)
    wp = fit_ridge(Xr, Y, 2.0, route="primal").w
    wd = fit_ridge(Xr, Y, 2.0, route="dual").w
    np.testing.assert_allclose(wp, wd, rtol=1e-9, atol=1e-12)
    assert fit_ridge(Xr, Y, 2.0).route == ("dual" if shape[1] > shape[0] else "primal")


def test_ridge_input_validation(rng):
    X, Y, C = make_instance(rng, 6, 2, 0)
    with pytest.raises(ValidationError, match="positive"):
        fit_ridge(X, Y, 0.0)
    with pytest.raises(ValidationError, match="finite"):
        fit_ridge(np.full((6, 2), np.nan), Y, 1.0)
    with pytest.raises(ValidationError, match="route"):
        fit_ridge(X, Y, 1.0, route="both")


def test_ridge_scores_residualize_with_training_fit(rng):
    X, Y, _ = make_instance(rng, 20, 3, 0)
    cov = rng.uniform(55, 90, (20, 1))
    C = build_covariate_basis(cov)
    res = fit_residualizer(X, C)
    m = fit_ridge(apply_residualizer(res, X, C.matrix), Y, 1.0, residualizer=res)
    X_new, cov_new = rng.standard_normal((4, 3)), rng.uniform(55, 90, (4, 1))
    C_new = C.augment(cov_new)
    np.testing.assert_allclose(ridge_scores(m, X_new, C_new), (X_new - C_new @ res.coefficients) @ m.w)
    bare = fit_ridge(X, Y, 1.0)
    with pytest.raises(ValidationError, match="residualizer"):
        ridge_scores(bare, X_new, C_new)


# --------------------------------------------------------------------------
# Haufe transform


def test_haufe_pattern_recomputes_from_covariance(rng):
    X, Y, C = make_instance(rng, 40, 5, 0)
    X = X @ rng.standard_normal((5, 5))
    Xr = residualize(C, X)
    m = fit_ridge(Xr, Y, 1.0)
    p = haufe_transform(m, Xr)
    S = np.cov(Xr, rowvar=False, bias=True)
    np.testing.assert_allclose(p.a, S @ m.w / (m.w @ S @ m.w), rtol=1e-10)
    assert np.linalg.norm(p.unit) == pytest.approx(1.0)
    assert p.prediction_variance == pytest.approx(m.w @ S @ m.w)


def test_haufe_whitened_design_keeps_direction(rng):
    n, d = 20000, 6
    X = rng.standard_normal((n, d))
    raw = np.where(X @ np.arange(1.0, d + 1) + rng.standard_normal(n) > 0, "p", "c")
    Y, _ = standardize_labels(raw)
    Xr = X - X.mean(axis=0)
    m = fit_ridge(Xr, Y, 1.0)
    assert _cos(haufe_transform(m, Xr).a, m.w) > 0.99


def test_haufe_spreads_over_perfectly_correlated_features():
    z = np.array([-1.5, -0.5, 0.5, 1.5, 2.0, -2.0])
    X = np.column_stack([z, z])
    m = RidgeModel(w=np.array([1.0, 0.0]), lam=1.0)
    a = haufe_transform(m, X).a
    assert a[0] == pytest.approx(a[1])


def test_haufe_zero_weights_are_degenerate(rng):
    X = rng.standard_normal((10, 3))
    with pytest.raises(ValidationError, match="degenerate pattern"):
        haufe_transform(RidgeModel(w=np.zeros(3), lam=1.0), X)


def test_haufe_recovers_forward_model_better_than_weights(rng):
    n, d = 400, 8
    a_true = np.r_[1.0, 1.0, 0.5, np.zeros(d - 3)]
    mix = np.eye(d) + 0.8 * np.ones((d, d)) / d  # correlated noise
    wins = 0
    for _ in range(5):
        raw = rng.permutation(np.r_[np.zeros(n // 2), np.ones(n // 2)])
        Y, _ = standardize_labels(raw)
        X = np.outer(Y, a_true) + rng.standard_normal((n, d)) @ mix * 1.5
        Xr = X - X.mean(axis=0)
        m = fit_ridge(Xr, Y, 1.0)
        ca, cw = _cos(haufe_transform(m, Xr).a, a_true), _cos(m.w, a_true)
        assert ca > 0 and cw > 0
        wins += ca > cw
    assert wins == 5


# --------------------------------------------------------------------------
# ridge null


def test_ridge_operator_reproduces_weights(rng):
    for shape in ((12, 4), (6, 20)):
        X, Y, C = make_instance(rng, *shape, 1)
        Xr = residualize(C, X)
        np.testing.assert_allclose(ridge_operator(Xr, 0.5) @ Y, fit_ridge(Xr, Y, 0.5).w, rtol=1e-10, atol=1e-13)


def test_ridge_operator_is_label_free(rng):
    X, Y, C = make_instance(rng, 10, 3, 0)
    Xr = residualize(C, X)
    Q = ridge_operator(Xr, 1.0)
    np.testing.assert_allclose(Q @ (3.7 * Y), 3.7 * fit_ridge(Xr, Y, 1.0).w, rtol=1e-12)
    np.testing.assert_allclose(ridge_null(Xr, 1.0).sigma, np.sqrt((Q**2).sum(axis=1)))


def test_ridge_null_matches_exhaustive_permutations(rng):
    X, Y, C = make_instance(rng, 6, 3, 0)
    Xr = residualize(C, X)
    W = np.array([fit_ridge(Xr, Y[list(p)], 1.0).w for p in itertools.permutations(range(6))])
    assert W.shape[0] == 720
    ratio = ridge_null(Xr, 1.0).sigma / W.std(axis=0)
    assert np.all(np.abs(ratio - 1) <= 0.15)


def test_haufe_operator_maps_labels_to_covariance_times_weights(rng):
    X, Y, C = make_instance(rng, 15, 4, 1)
    Xr = residualize(C, X)
    m = fit_ridge(Xr, Y, 1.0)
    S = np.cov(Xr, rowvar=False, bias=True)
    np.testing.assert_allclose(haufe_operator(Xr, 1.0) @ Y, S @ m.w, rtol=1e-10)
    H = haufe_operator(Xr, 1.0)
    np.testing.assert_allclose(haufe_null(Xr, 1.0).sigma, np.linalg.norm(H, axis=1))
