"""Comparison models: ridge on residualized features and its Haufe pattern."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from gdm.core import LabelTransform, ResidualizerFit, apply_residualizer
from gdm.errors import ValidationError
from gdm.inference import NullSpec, null_from_operator
from gdm.solver import _solve_spd


@dataclass(frozen=True, eq=False)
class RidgeModel:
    w: np.ndarray
    lam: float
    residualizer: Optional[ResidualizerFit] = None
    label_transform: Optional[LabelTransform] = None
    route: str = "primal"


@dataclass(frozen=True, eq=False)
class ActivationPattern:
    """Haufe pattern ``Cov(X) w / Var(X w)`` plus its unit-norm version."""

    a: np.ndarray
    source_model: RidgeModel
    prediction_variance: float

    @property
    def unit(self) -> np.ndarray:
        return self.a / np.linalg.norm(self.a)


def _check(X_res, Y=None):
    X_res = np.asarray(X_res, dtype=float)
    if X_res.ndim != 2:
        raise ValidationError("X_res must be a matrix")
    if not np.all(np.isfinite(X_res)):
        raise ValidationError("non-finite entries in X_res")
    if Y is None:
        return X_res
    Y = np.asarray(Y, dtype=float)
    if Y.shape != (X_res.shape[0],) or not np.all(np.isfinite(Y)):
        raise ValidationError("Y must be a finite vector matching X_res rows")
    return X_res, Y


def _check_lam(lam):
    lam = float(lam)
    if not (np.isfinite(lam) and lam > 0):
        raise ValidationError(f"ridge lambda must be positive and finite, got {lam}")
    return lam


def ridge_operator(X_res, lam: float) -> np.ndarray:
    """``Q_r = (I + lam X^T X)^-1 lam X^T`` (d x n), so that ``w = Q_r Y``."""
    X_res = _check(X_res)
    lam = _check_lam(lam)
    n, d = X_res.shape
    if d > n:
        K = X_res @ X_res.T
        K[np.diag_indices(n)] += 1.0 / lam
        return X_res.T @ _solve_spd(K, np.eye(n), "ridge dual")
    A = lam * (X_res.T @ X_res)
    A[np.diag_indices(d)] += 1.0
    return _solve_spd(A, lam * X_res.T, "ridge primal")


def fit_ridge(X_res, Y, lam: float, *, route: str = "auto",
              residualizer: Optional[ResidualizerFit] = None,
              label_transform: Optional[LabelTransform] = None) -> RidgeModel:
    """Minimize ``||w||^2 + lam ||Y - X_res w||^2``; dual solve when d > n."""
    X_res, Y = _check(X_res, Y)
    lam = _check_lam(lam)
    n, d = X_res.shape
    if route == "auto":
        route = "dual" if d > n else "primal"
    if route == "dual":
        K = X_res @ X_res.T
        K[np.diag_indices(n)] += 1.0 / lam
        w = X_res.T @ _solve_spd(K, Y, "ridge dual")
    elif route == "primal":
        A = lam * (X_res.T @ X_res)
        A[np.diag_indices(d)] += 1.0
        w = _solve_spd(A, lam * (X_res.T @ Y), "ridge primal")
    else:
        raise ValidationError(f"unknown ridge route {route!r}")
    return RidgeModel(w=w, lam=lam, residualizer=residualizer,
                      label_transform=label_transform, route=route)


def ridge_scores(model: RidgeModel, X_new, C_new=None) -> np.ndarray:
    """Standardized-space scores; residualizes with the training fit when C_new is given."""
    X_new = np.asarray(X_new, dtype=float)
    if C_new is not None:
        if model.residualizer is None:
            raise ValidationError("model has no residualizer; pass residualized X_new")
        X_new = apply_residualizer(model.residualizer, X_new, C_new)
    if X_new.shape[1] != model.w.shape[0]:
        raise ValidationError(f"X_new must have {model.w.shape[0]} columns")
    return X_new @ model.w


def _centered_cov_times(X_res, v):
    Xc = X_res - X_res.mean(axis=0)
    s = Xc @ v
    return Xc.T @ s / X_res.shape[0], float(s @ s) / X_res.shape[0]


def haufe_transform(model: RidgeModel, X_res_train) -> ActivationPattern:
    """Turn the ridge filter into a forward-model activation pattern.

    Covariance uses centered training features with 1/n normalization.
    """
    X_res_train = _check(X_res_train)
    if X_res_train.shape[1] != model.w.shape[0]:
        raise ValidationError("feature count differs from the ridge model")
    cov_w, var = _centered_cov_times(X_res_train, model.w)
    scale = max(1.0, float(np.abs(cov_w).max(initial=0.0)))
    if not var > 1e-300 or not np.any(np.abs(cov_w) > 1e-14 * scale):
        raise ValidationError("degenerate pattern: predictions have zero variance")
    return ActivationPattern(a=cov_w / var, source_model=model, prediction_variance=var)


def haufe_operator(X_res, lam: float) -> np.ndarray:
    """``Cov(X_res) Q_r``: maps labels to the unnormalized Haufe pattern ``Cov w``."""
    X_res = _check(X_res)
    Xc = X_res - X_res.mean(axis=0)
    Qr = ridge_operator(X_res, lam)
    return Xc.T @ (Xc @ Qr) / X_res.shape[0]


def ridge_null(X_res, lam: float) -> NullSpec:
    """Null sigma for ridge weights: ``w = Q_r Y`` with Q_r free of Y."""
    return null_from_operator(ridge_operator(X_res, lam))


def haufe_null(X_res, lam: float) -> NullSpec:
    """Null sigma for the unnormalized pattern ``Cov(X_res) w``.

    The normalized pattern divides by a label-dependent variance, so tests on
    it use the linear ``Cov w`` numerator; its z-scores are scale-free anyway.
    """
    return null_from_operator(haufe_operator(X_res, lam))
