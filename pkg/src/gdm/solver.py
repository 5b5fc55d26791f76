"""Closed-form solvers for the generative-discriminative machine (GDM).

The model couples a ridge discriminator with an OLS generator::

    min_{J, W0, A0}  ||J||^2 + l1 ||Y - X J - C W0||^2 + l2 ||X^T - J Y^T - A0 C^T||_F^2

Profiling out W0 and A0 (both are ordinary least-squares fits given J) leaves a
d-dimensional ridge-like system with an extra scalar ``l2 * Y^T R Y`` on the
diagonal, where ``R = I - C (C^T C)^-1 C^T``.  The dual route solves the same
problem through an (n + k) x (n + k) saddle-point matrix, which is the cheap
one when d >> n.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from gdm.core import (
    CovariateBasis,
    LabelTransform,
    check_standardized,
    project_onto_covariates,
    residualize,
)
from gdm.errors import ComputationError, ValidationError

LAMBDA1_MIN = 1e-12
COND_LIMIT = 1e12


@dataclass(frozen=True)
class GdmHyperParams:
    lambda1: float
    lambda2: float

    def __post_init__(self):
        l1, l2 = float(self.lambda1), float(self.lambda2)
        if not (np.isfinite(l1) and np.isfinite(l2)):
            raise ValidationError("hyperparameters must be finite")
        if l1 < LAMBDA1_MIN:
            raise ValidationError(f"lambda1 must be >= {LAMBDA1_MIN}, got {l1}")
        if l2 < 0:
            raise ValidationError(f"lambda2 must be >= 0, got {l2}")
        object.__setattr__(self, "lambda1", l1)
        object.__setattr__(self, "lambda2", l2)


@dataclass(frozen=True, eq=False)
class GdmModel:
    J: np.ndarray
    W0: np.ndarray
    A0: np.ndarray
    hyper: GdmHyperParams
    solver_route: str
    label_transform: Optional[LabelTransform] = None

    @property
    def d(self) -> int:
        return self.J.shape[0]

    @property
    def k(self) -> int:
        return self.W0.shape[0]


@dataclass(frozen=True)
class ObjectiveTerms:
    total: float
    penalty: float
    discriminator: float
    generator: float


def _check_inputs(X, Y, C: CovariateBasis):
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if X.ndim != 2 or Y.ndim != 1:
        raise ValidationError("X must be n x d and Y a length-n vector")
    if X.shape[0] != Y.shape[0] or X.shape[0] != C.n:
        raise ValidationError(
            f"dimension mismatch: X has {X.shape[0]} rows, Y {Y.shape[0]}, C {C.n}"
        )
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ValidationError("non-finite entries in X or Y")
    return X, Y


def gdm_objective(X, Y, C, J, W0, A0, hyper: GdmHyperParams) -> ObjectiveTerms:
    """Evaluate the GDM objective; ``C`` may be a basis or a plain n x k matrix."""
    Cm = C.matrix if isinstance(C, CovariateBasis) else np.asarray(C, dtype=float)
    arrays = [np.asarray(a, dtype=float) for a in (X, Y, Cm, J, W0, A0)]
    X, Y, Cm, J, W0, A0 = arrays
    n, d = X.shape
    k = Cm.shape[1]
    if Y.shape != (n,) or Cm.shape[0] != n or J.shape != (d,) or W0.shape != (k,) or A0.shape != (d, k):
        raise ValidationError("dimension mismatch in objective arguments")
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise ValidationError("non-finite objective arguments")
    penalty = float(J @ J)
    r = Y - X @ J - Cm @ W0
    disc = hyper.lambda1 * float(r @ r)
    G = X.T - np.outer(J, Y) - A0 @ Cm.T
    gen = hyper.lambda2 * float(np.sum(G * G))
    return ObjectiveTerms(total=penalty + disc + gen, penalty=penalty, discriminator=disc, generator=gen)


def objective_gradient(X, Y, C, J, W0, A0, hyper: GdmHyperParams):
    """Analytic gradient of the objective with respect to (J, W0, A0)."""
    Cm = C.matrix if isinstance(C, CovariateBasis) else np.asarray(C, dtype=float)
    l1, l2 = hyper.lambda1, hyper.lambda2
    r = Y - X @ J - Cm @ W0
    G = X.T - np.outer(J, Y) - A0 @ Cm.T
    gJ = 2 * J - 2 * l1 * X.T @ r - 2 * l2 * G @ Y
    gW = -2 * l1 * Cm.T @ r
    gA = -2 * l2 * G @ Cm
    return gJ, gW, gA


def recover_covariate_terms(X, Y, C: CovariateBasis, J):
    """Least-squares W0 and A0 given J."""
    W0 = C.gram_inverse @ (C.matrix.T @ (Y - X @ J))
    A0 = ((X.T - np.outer(J, Y)) @ C.matrix) @ C.gram_inverse
    return W0, A0


def _solve_spd(A: np.ndarray, b: np.ndarray, what: str) -> np.ndarray:
    """Cholesky solve, falling back to a pivoted QR solve for ill-conditioned systems."""
    try:
        cho = scipy.linalg.cho_factor(A, check_finite=False)
        diag = np.diag(cho[0]) ** 2
        if diag.min() > 0 and diag.max() / diag.min() < COND_LIMIT:
            return scipy.linalg.cho_solve(cho, b, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    cond = np.linalg.cond(A)
    if not np.isfinite(cond):
        raise ComputationError(f"singular {what} system (condition estimate inf)")
    q, r, perm = scipy.linalg.qr(A, pivoting=True)
    if abs(r[-1, -1]) <= np.finfo(float).eps * abs(r[0, 0]):
        raise ComputationError(f"singular {what} system (condition estimate {cond:.3g})")
    z = scipy.linalg.solve_triangular(r, q.T @ b)
    x = np.empty_like(z)
    x[perm] = z
    return x


def _generative_scalar(Y: np.ndarray, Y_r: np.ndarray, lambda2: float) -> float:
    """``1 + l2 (Y^T Y - Y^T P Y)``."""
    return 1.0 + lambda2 * float(Y @ Y_r)


def fit_primal(X, Y, C: CovariateBasis, hyper: GdmHyperParams, *, check_labels=True,
               debug=False, label_transform=None) -> GdmModel:
    """Solve the d x d closed-form system for J, then recover W0 and A0."""
    X, Y = _check_inputs(X, Y, C)
    if check_labels:
        check_standardized(Y)
    l1, l2 = hyper.lambda1, hyper.lambda2
    Xr = residualize(C, X)
    Yr = residualize(C, Y)
    d = X.shape[1]
    A = l1 * (Xr.T @ Xr)
    A[np.diag_indices(d)] += 1.0 + l2 * float(Y @ Yr)
    b = (l1 + l2) * (X.T @ Yr)
    J = _solve_spd(A, b, "primal")
    return _finish(X, Y, C, J, hyper, "primal", debug, label_transform)


def dual_block(X, Y, C: CovariateBasis, hyper: GdmHyperParams):
    """Top-left n x n block of the inverse saddle-point matrix, and the scalar s.

    ``M = [[-X X^T / s - I / l1, C], [C^T, 0]]``; the block is taken from the
    inverse of the full (n + k) matrix, not the inverse of M's own block.
    """
    n, k = C.n, C.k
    s = _generative_scalar(Y, residualize(C, Y), hyper.lambda2)
    M = np.zeros((n + k, n + k))
    M[:n, :n] = -(X @ X.T) / s
    M[np.diag_indices(n)] -= 1.0 / hyper.lambda1
    M[:n, n:] = C.matrix
    M[n:, :n] = C.matrix.T
    rhs = np.zeros((n + k, n))
    rhs[:n] = np.eye(n)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
            Z = scipy.linalg.solve(M, rhs, assume_a="sym", check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgWarning):
        raise ComputationError(f"singular dual matrix (condition estimate {np.linalg.cond(M):.3g})") from None
    N = Z[:n]
    return 0.5 * (N + N.T), s


def fit_dual(X, Y, C: CovariateBasis, hyper: GdmHyperParams, *, check_labels=True,
             debug=False, label_transform=None) -> GdmModel:
    """Solve in subject space via the dual variables, then recover J, W0, A0."""
    X, Y = _check_inputs(X, Y, C)
    if check_labels:
        check_standardized(Y)
    l2 = hyper.lambda2
    N, s = dual_block(X, Y, C, hyper)
    Yr = residualize(C, Y)
    # (I + l2 (X X^T P - X X^T) / s) Y == Y - l2 X X^T R Y / s
    Lam = N @ (Y - l2 * (X @ (X.T @ Yr)) / s)
    J = (l2 * (X.T @ Yr) - X.T @ Lam) / s
    return _finish(X, Y, C, J, hyper, "dual", debug, label_transform)


def fit(X, Y, C: CovariateBasis, hyper: GdmHyperParams, route: str = "auto", **kw) -> GdmModel:
    """Dispatch to the dual route when d > n + k, otherwise the primal."""
    if route == "auto":
        X = np.asarray(X)
        route = "dual" if X.shape[1] > X.shape[0] + C.k else "primal"
    if route == "primal":
        return fit_primal(X, Y, C, hyper, **kw)
    if route == "dual":
        return fit_dual(X, Y, C, hyper, **kw)
    raise ValidationError(f"unknown solver route {route!r}")


def _finish(X, Y, C, J, hyper, route, debug, label_transform) -> GdmModel:
    W0, A0 = recover_covariate_terms(X, Y, C, J)
    if not (np.all(np.isfinite(J)) and np.all(np.isfinite(W0)) and np.all(np.isfinite(A0))):
        raise ComputationError(f"{route} solve produced non-finite parameters")
    if debug:
        terms = gdm_objective(X, Y, C, J, W0, A0, hyper)
        grads = objective_gradient(X, Y, C, J, W0, A0, hyper)
        gnorm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
        if gnorm > 1e-6 * (1.0 + terms.total):
            raise ComputationError(f"optimality check failed: gradient norm {gnorm:.3g}")
    return GdmModel(J=J, W0=W0, A0=A0, hyper=hyper, solver_route=route, label_transform=label_transform)


def predict(model: GdmModel, X_new, C_new):
    """Scores ``X J + C W0`` in standardized-label space and decoded classes.

    ``C_new`` is the intercept-augmented covariate matrix of the new subjects.
    Classes need ``model.label_transform``; without it they are -1/+1 codes of
    the standardized score.
    """
    X_new = np.asarray(X_new, dtype=float)
    C_new = np.asarray(C_new.matrix if isinstance(C_new, CovariateBasis) else C_new, dtype=float)
    if X_new.ndim != 2 or X_new.shape[1] != model.d:
        raise ValidationError(f"X_new must have {model.d} columns")
    if C_new.ndim != 2 or C_new.shape[1] != model.k or C_new.shape[0] != X_new.shape[0]:
        raise ValidationError(f"C_new must be {X_new.shape[0]} x {model.k}")
    scores = X_new @ model.J + C_new @ model.W0
    if model.label_transform is None:
        return scores, np.where(scores > 0, 1.0, -1.0)
    return scores, model.label_transform.decode(scores)


class GdmPath:
    """All (l1, l2) solutions for one training set from a single SVD.

    With ``R X = U S V^T`` the primal system diagonalizes, so each grid point
    costs O(d r) instead of a fresh factorization.  Used by cross-validation.
    """

    def __init__(self, X, Y, C: CovariateBasis, *, check_labels=True):
        X, Y = _check_inputs(X, Y, C)
        if check_labels:
            check_standardized(Y)
        self.X, self.Y, self.C = X, Y, C
        Xr = residualize(C, X)
        Yr = residualize(C, Y)
        U, S, Vt = np.linalg.svd(Xr, full_matrices=False)
        self._S, self._Vt = S, Vt
        self._proj = S * (U.T @ Yr)
        self._yry = float(Y @ Yr)
        self.gamma = C.gram_inverse @ (C.matrix.T @ Y)
        self.coef = C.gram_inverse @ (C.matrix.T @ X)

    def J(self, hyper: GdmHyperParams) -> np.ndarray:
        l1, l2 = hyper.lambda1, hyper.lambda2
        denom = 1.0 + l2 * self._yry + l1 * self._S**2
        return self._Vt.T @ ((l1 + l2) * self._proj / denom)

    def W0(self, J: np.ndarray) -> np.ndarray:
        return self.gamma - self.coef @ J
