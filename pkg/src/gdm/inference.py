"""Permutation-free inference for GDM parameters.

GDM's closed form makes the parameter vector linear in the labels,
``J = Q Y``, where Q depends on Y only through one scalar and is therefore
nearly constant under relabeling.  For standardized labels this gives each
``J_i`` permutation mean 0 and variance ``sum_j Q_ij^2``; two-sided Gaussian
p-values follow.  ``permutation_pvalues`` is the oracle that checks it.
"""

from __future__ import annotations

import itertools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np
from scipy.stats import norm

from gdm.core import CovariateBasis, check_standardized, residualize
from gdm.errors import ValidationError
from gdm.solver import GdmHyperParams, _check_inputs, dual_block, fit


class DegenerateNullWarning(UserWarning):
    """A parameter is nonzero although its null standard deviation is zero."""


@dataclass(frozen=True, eq=False)
class QMatrix:
    Q: np.ndarray
    scalar_s: float
    hyper: GdmHyperParams
    fingerprint: str


@dataclass(frozen=True, eq=False)
class NullSpec:
    sigma: np.ndarray
    mean: float = 0.0

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.ndim != 1 or not np.all(np.isfinite(sigma)):
            raise ValidationError("null sigma must be a finite vector")
        if np.any(sigma < 0):
            raise ValidationError("negative null standard deviation")
        object.__setattr__(self, "sigma", sigma)


@dataclass(frozen=True, eq=False)
class InferenceResult:
    p_raw: np.ndarray
    rejected: np.ndarray
    q_level: float
    method: str
    n_permutations: Optional[int] = None


def _fingerprint(*arrays) -> str:
    import hashlib

    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=float).tobytes())
    return h.hexdigest()[:16]


def build_q_matrix(X, Y, C: CovariateBasis, hyper: GdmHyperParams, *, check_labels=True) -> QMatrix:
    """Assemble the d x n matrix with ``J = Q Y``.

    ``Q = [l2 X^T R - X^T N (I - l2 X X^T R / s)] / s`` with N the top-left
    block of the inverse dual matrix and ``s = 1 + l2 Y^T R Y``.
    """
    X, Y = _check_inputs(X, Y, C)
    if check_labels:
        check_standardized(Y)
    l2 = hyper.lambda2
    N, s = dual_block(X, Y, C, hyper)
    XtR = residualize(C, X).T  # X^T R, R symmetric
    inner = -l2 * (X @ XtR) / s
    inner[np.diag_indices(X.shape[0])] += 1.0
    Q = (l2 * XtR - X.T @ (N @ inner)) / s
    return QMatrix(Q=Q, scalar_s=s, hyper=hyper, fingerprint=_fingerprint(X, C.matrix))


def null_from_operator(Q) -> NullSpec:
    Q = np.asarray(Q, dtype=float)
    return NullSpec(sigma=np.sqrt(np.sum(Q * Q, axis=1)))


def analytic_null(Q: QMatrix) -> NullSpec:
    """Per-feature null standard deviation: row norms of Q."""
    return null_from_operator(Q.Q)


def analytic_pvalues(J, null: NullSpec) -> np.ndarray:
    """Two-sided Gaussian p-values ``2 (1 - Phi(|J| / sigma))``."""
    J = np.asarray(J, dtype=float)
    if not isinstance(null, NullSpec):
        null = NullSpec(sigma=null)
    sigma = null.sigma
    if J.shape != sigma.shape:
        raise ValidationError(f"J has length {J.shape}, null has {sigma.shape}")
    p = np.ones_like(J)
    pos = sigma > 0
    p[pos] = 2.0 * norm.sf(np.abs(J[pos]) / sigma[pos])
    flagged = ~pos & (J != 0)
    if flagged.any():
        warnings.warn(
            f"{int(flagged.sum())} parameter(s) nonzero with zero null sigma; p set to 0",
            DegenerateNullWarning,
            stacklevel=2,
        )
        p[flagged] = 0.0
    return np.clip(p, 0.0, 1.0)


def _permutations(n: int, n_perm: int, seed):
    """Row-stacked index permutations, exhaustive when n! <= n_perm."""
    if math.factorial(n) <= n_perm:
        return np.array(list(itertools.permutations(range(n)))), True
    rng = np.random.default_rng(seed)
    return np.array([rng.permutation(n) for _ in range(n_perm)]), False


def permutation_pvalues(X, Y, C: CovariateBasis, hyper: GdmHyperParams, n_perm: int, seed=0,
                        mode: str = "full_refit", *, route: str = "auto", check_labels=True,
                        n_jobs: int = 1):
    """Permutation p-values for each J_i.

    ``full_refit`` refits the model for every relabeling; ``fixed_Q`` reuses
    the Q built on the observed labels.  Monte-Carlo p-values use the add-one
    estimator ``(1 + #{|J*| >= |J|}) / (n_perm + 1)``.  When ``n! <= n_perm``
    every relabeling is enumerated once and the exact ``#{...} / n!`` is
    returned (the identity is one of the enumerated relabelings).

    Returns ``(p, perm_stats)`` with ``perm_stats`` of shape (n_perm, d).
    """
    if int(n_perm) < 1:
        raise ValidationError("n_perm must be >= 1")
    X, Y = _check_inputs(X, Y, C)
    if check_labels:
        check_standardized(Y)
    perms, exhaustive = _permutations(X.shape[0], int(n_perm), seed)

    if mode == "fixed_Q":
        q = build_q_matrix(X, Y, C, hyper, check_labels=False)
        J = q.Q @ Y
        stats = _operator_stats(q.Q, Y, perms)
    elif mode == "full_refit":
        J = fit(X, Y, C, hyper, route=route, check_labels=False).J

        def one(idx):
            return fit(X, Y[idx], C, hyper, route=route, check_labels=False).J

        if n_jobs == 1:
            stats = np.array([one(idx) for idx in perms])
        else:
            with ThreadPoolExecutor(max_workers=n_jobs) as ex:
                stats = np.array(list(ex.map(one, perms)))
    else:
        raise ValidationError(f"unknown permutation mode {mode!r}")

    p = exceedance_pvalues(J, stats, exact=exhaustive)
    return p, stats


def _operator_stats(Q, Y, perms, chunk: int = 2048):
    out = np.empty((len(perms), Q.shape[0]))
    for start in range(0, len(perms), chunk):
        block = perms[start:start + chunk]
        out[start:start + len(block)] = (Q @ Y[block].T).T
    return out


def linear_permutation_pvalues(Q, Y, n_perm: int, seed=0):
    """Permutation p-values for a statistic that is exactly linear in Y, ``T = Q Y``.

    Exact for ridge and the unnormalized Haufe pattern, whose operators do not
    depend on Y.  Returns ``(p, perm_stats)``.
    """
    if int(n_perm) < 1:
        raise ValidationError("n_perm must be >= 1")
    Q = np.asarray(Q, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if Q.ndim != 2 or Q.shape[1] != Y.shape[0]:
        raise ValidationError("operator columns must match the label count")
    perms, exhaustive = _permutations(Y.shape[0], int(n_perm), seed)
    stats = _operator_stats(Q, Y, perms)
    return exceedance_pvalues(Q @ Y, stats, exact=exhaustive), stats


def exceedance_pvalues(J, stats, exact: bool = False) -> np.ndarray:
    """Two-sided exceedance p-values of ``J`` against a permutation sample."""
    J = np.asarray(J, dtype=float)
    stats = np.asarray(stats, dtype=float)
    tol = 1e-12 * (1.0 + np.abs(J))
    count = np.sum(np.abs(stats) >= np.abs(J) - tol, axis=0)
    m = stats.shape[0]
    if exact:
        return count / m
    return (1.0 + count) / (m + 1.0)


def bh_fdr(p_raw, q: float = 0.05) -> np.ndarray:
    """Benjamini-Hochberg step-up; returns a boolean rejection mask."""
    p = np.asarray(p_raw, dtype=float)
    if p.size == 0:
        raise ValidationError("bh_fdr needs at least one p-value")
    if not (0.0 < q < 1.0):
        raise ValidationError(f"fdr q must lie in (0, 1), got {q}")
    if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise ValidationError("p-values must lie in [0, 1]")
    m = p.size
    ranked = np.sort(p)
    below = ranked <= q * np.arange(1, m + 1) / m
    if not below.any():
        return np.zeros(m, dtype=bool)
    cutoff = ranked[np.nonzero(below)[0].max()]
    return p <= cutoff


def infer(J, null: NullSpec, q: float = 0.05) -> InferenceResult:
    p = analytic_pvalues(J, null)
    return InferenceResult(p_raw=p, rejected=bh_fdr(p, q), q_level=q, method="analytic")


@dataclass(frozen=True)
class AgreementCurve:
    budgets: tuple
    mean_abs_error: tuple
    slope: Optional[float]


def pvalue_agreement(p_analytic, p_perm_by_budget: Mapping[int, np.ndarray]) -> AgreementCurve:
    """Mean |p_analytic - p_perm| per budget and the log-log slope against budget."""
    pa = np.asarray(p_analytic, dtype=float)
    budgets = sorted(int(b) for b in p_perm_by_budget)
    errors = []
    for b in budgets:
        pp = np.asarray(p_perm_by_budget[b], dtype=float)
        if pp.shape != pa.shape:
            raise ValidationError(f"budget {b}: {pp.shape[0]} p-values, expected {pa.shape[0]}")
        errors.append(float(np.mean(np.abs(pa - pp))))
    slope = None
    err = np.asarray(errors)
    if len(budgets) >= 2 and np.all(err > 0):
        slope = float(np.polyfit(np.log10(budgets), np.log10(err), 1)[0])
    return AgreementCurve(budgets=tuple(budgets), mean_abs_error=tuple(errors), slope=slope)
