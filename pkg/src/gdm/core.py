"""Domain types and the linear-algebra primitives shared by every solver.

The conventions fixed here are relied upon everywhere else:

* labels are standardized to mean 0 and *population* variance 1; two-class
  labels are first coded -1/+1 with the lexicographically smaller class at -1;
* the covariate matrix always carries an intercept column of ones first;
* projections onto the covariate span are applied in factored form,
  ``C @ (G^-1 @ (C.T @ V))``, never through an n x n projector.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from gdm.errors import ValidationError

DEFAULT_RANK_TOL = 1e-10


def _as_finite(name: str, a, ndim: Optional[int] = None) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise ValidationError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class Cohort:
    """Subjects x features table with labels, covariates and optional site tags."""

    features: np.ndarray
    labels_raw: np.ndarray
    covariates_raw: np.ndarray
    feature_names: tuple
    subject_ids: tuple
    covariate_names: tuple = ()
    site: Optional[np.ndarray] = None

    def __post_init__(self):
        X = _as_finite("features", self.features, ndim=2)
        n, d = X.shape
        if n < 2 or d < 1:
            raise ValidationError(f"cohort needs n >= 2 and d >= 1, got n={n}, d={d}")
        labels = np.asarray(self.labels_raw)
        if labels.shape != (n,):
            raise ValidationError(f"labels must have length {n}, got shape {labels.shape}")
        if labels.dtype.kind in "fiu" and not np.all(np.isfinite(labels.astype(float))):
            raise ValidationError("labels contain non-finite entries")
        cov = np.asarray(self.covariates_raw, dtype=float)
        if cov.size == 0:
            cov = np.zeros((n, 0))
        cov = _as_finite("covariates", cov, ndim=2)
        if cov.shape[0] != n:
            raise ValidationError(f"covariates have {cov.shape[0]} rows, expected {n}")
        cov_names = tuple(self.covariate_names) or tuple(f"cov{j}" for j in range(cov.shape[1]))
        if len(cov_names) != cov.shape[1]:
            raise ValidationError("covariate_names length does not match covariate columns")
        fnames = tuple(str(f) for f in self.feature_names)
        ids = tuple(str(s) for s in self.subject_ids)
        if len(fnames) != d:
            raise ValidationError(f"expected {d} feature names, got {len(fnames)}")
        if len(ids) != n:
            raise ValidationError(f"expected {n} subject ids, got {len(ids)}")
        _check_unique("feature name", fnames)
        _check_unique("subject_id", ids)
        if np.unique(labels).size < 2:
            raise ValidationError("degenerate labels: fewer than 2 classes/values present")
        site = None
        if self.site is not None:
            site = np.asarray(self.site).astype(str)
            if site.shape != (n,):
                raise ValidationError("site vector length does not match subjects")
        for name, value in [("features", X), ("labels_raw", labels), ("covariates_raw", cov),
                            ("covariate_names", cov_names), ("feature_names", fnames),
                            ("subject_ids", ids), ("site", site)]:
            object.__setattr__(self, name, value)
        for arr in (X, labels, cov, site):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def covariate(self, name: str) -> np.ndarray:
        try:
            return self.covariates_raw[:, self.covariate_names.index(name)]
        except ValueError:
            raise ValidationError(f"cohort has no covariate named {name!r}") from None

    def subset(self, idx) -> "Cohort":
        idx = np.asarray(idx)
        return Cohort(
            features=self.features[idx],
            labels_raw=self.labels_raw[idx],
            covariates_raw=self.covariates_raw[idx],
            feature_names=self.feature_names,
            subject_ids=tuple(np.asarray(self.subject_ids, dtype=object)[idx]),
            covariate_names=self.covariate_names,
            site=None if self.site is None else self.site[idx],
        )

    def sites(self) -> list:
        if self.site is None:
            return ["all"]
        return sorted(set(self.site.tolist()))


def _check_unique(what: str, values: Sequence[str]) -> None:
    seen = set()
    for v in values:
        if v in seen:
            raise ValidationError(f"duplicate {what}: {v!r}")
        seen.add(v)


@dataclass(frozen=True)
class LabelTransform:
    """Records how raw labels were mapped to standardized values.

    ``class_codes`` maps each class to -1/+1 for two-class labels and is
    ``None`` for real-valued labels.
    """

    class_codes: Optional[dict]
    mean: float
    scale: float

    @property
    def categorical(self) -> bool:
        return self.class_codes is not None

    def encode(self, labels_raw) -> np.ndarray:
        """Raw labels to the pre-standardization code space."""
        labels = np.asarray(labels_raw)
        if self.class_codes is None:
            return labels.astype(float)
        keys = labels.tolist()
        try:
            return np.array([self.class_codes[key] for key in keys], dtype=float)
        except KeyError as exc:
            raise ValidationError(f"unknown class label {exc.args[0]!r}") from None

    def transform(self, labels_raw) -> np.ndarray:
        return (self.encode(labels_raw) - self.mean) / self.scale

    def inverse(self, Y) -> np.ndarray:
        """Standardized values back to the code space (identity for real labels)."""
        return np.asarray(Y, dtype=float) * self.scale + self.mean

    def decode(self, scores, space: str = "standardized") -> np.ndarray:
        """Class of sign(score); a score of exactly 0 goes to the -1 class.

        ``space="standardized"`` thresholds the standardized score at 0 (the
        label mean); ``space="code"`` thresholds after undoing the
        standardization, i.e. at the midpoint of the -1/+1 codes.
        """
        scores = np.asarray(scores, dtype=float)
        if self.class_codes is None:
            return self.inverse(scores)
        if space == "code":
            scores = self.inverse(scores)
        elif space != "standardized":
            raise ValidationError(f"unknown decision space {space!r}")
        inv = {v: k for k, v in self.class_codes.items()}
        return np.where(scores > 0, inv[1.0], inv[-1.0])

    def classes(self) -> tuple:
        """(negative class, positive class)."""
        if self.class_codes is None:
            raise ValidationError("real-valued labels have no classes")
        inv = {v: k for k, v in self.class_codes.items()}
        return inv[-1.0], inv[1.0]


def _is_categorical(labels: np.ndarray) -> bool:
    if labels.dtype.kind not in "fiub":
        return True
    return np.unique(labels).size == 2


def standardize_labels(labels_raw, categorical: Optional[bool] = None):
    """Code and standardize labels to mean 0, population variance 1.

    Non-numeric labels, and numeric labels with exactly two distinct values,
    are treated as classes unless ``categorical`` says otherwise.

    Returns ``(Y, transform)``.
    """
    labels = np.asarray(labels_raw)
    if labels.ndim != 1:
        raise ValidationError("labels must be a vector")
    if categorical is None:
        categorical = _is_categorical(labels)
    if categorical:
        classes = sorted(set(labels.tolist()))
        if len(classes) < 2:
            raise ValidationError("degenerate labels: only one class present")
        if len(classes) > 2:
            raise ValidationError(f"expected two classes, found {len(classes)}")
        codes = {classes[0]: -1.0, classes[1]: 1.0}
        coded = np.array([codes[v] for v in labels.tolist()])
    else:
        codes = None
        coded = _as_finite("labels", labels, ndim=1)
    mean = float(coded.mean())
    scale = float(coded.std())
    if not scale > 0:
        raise ValidationError("degenerate labels: zero variance")
    t = LabelTransform(class_codes=codes, mean=mean, scale=scale)
    return (coded - mean) / scale, t


def check_standardized(Y: np.ndarray, tol: float = 1e-8) -> None:
    if abs(Y.mean()) > tol or abs(Y.var() - 1.0) > tol:
        raise ValidationError(
            f"labels are not standardized (mean={Y.mean():.3g}, var={Y.var():.3g}); "
            "use standardize_labels first"
        )


@dataclass(frozen=True, eq=False)
class CovariateBasis:
    """Intercept-augmented covariate matrix with its cached Gram inverse."""

    matrix: np.ndarray
    column_names: tuple
    gram_inverse: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def k(self) -> int:
        return self.matrix.shape[1]

    def augment(self, covariates_raw) -> np.ndarray:
        """Apply the same augmentation (intercept first) to new subjects."""
        return augment_covariates(covariates_raw, self.k - 1)


def _as_matrix(covariates_raw, n: Optional[int] = None) -> np.ndarray:
    if covariates_raw is None:
        covariates_raw = np.zeros((n or 0, 0))
    cov = np.asarray(covariates_raw, dtype=float)
    if cov.ndim == 1:
        cov = np.zeros((n or 0, 0)) if cov.size == 0 else cov[:, None]
    return cov


def augment_covariates(covariates_raw, k_raw: Optional[int] = None) -> np.ndarray:
    cov = _as_matrix(covariates_raw)
    if k_raw is not None and cov.shape[1] != k_raw:
        raise ValidationError(f"expected {k_raw} covariate columns, got {cov.shape[1]}")
    return np.column_stack([np.ones(cov.shape[0]), cov])


def build_covariate_basis(
    covariates_raw,
    rank_tol: float = DEFAULT_RANK_TOL,
    names: Optional[Sequence[str]] = None,
    n: Optional[int] = None,
    allow_pinv: bool = False,
) -> CovariateBasis:
    """Prepend an intercept to the covariates and cache ``(C^T C)^-1``.

    A rank-deficient design is an error naming the first offending column,
    unless ``allow_pinv`` is set, in which case the pseudo-inverse is used.
    """
    cov = _as_matrix(covariates_raw, n)
    cov = _as_finite("covariates", cov, ndim=2)
    if n is not None and cov.shape[0] != n:
        raise ValidationError(f"covariates have {cov.shape[0]} rows, expected {n}")
    names = tuple(names) if names is not None else tuple(f"cov{j}" for j in range(cov.shape[1]))
    if len(names) != cov.shape[1]:
        raise ValidationError("covariate names do not match covariate columns")
    C = np.column_stack([np.ones(cov.shape[0]), cov])
    columns = ("intercept",) + names

    sv = np.linalg.svd(C, compute_uv=False)
    if sv[-1] <= rank_tol * sv[0]:
        if not allow_pinv:
            raise ValidationError(_rank_message(C, columns, rank_tol))
        gram_inverse = np.linalg.pinv(C.T @ C, rcond=rank_tol)
    else:
        gram_inverse = np.linalg.inv(C.T @ C)
    gram_inverse = 0.5 * (gram_inverse + gram_inverse.T)
    C.setflags(write=False)
    gram_inverse.setflags(write=False)
    return CovariateBasis(matrix=C, column_names=columns, gram_inverse=gram_inverse)


def _rank_message(C: np.ndarray, columns: tuple, rank_tol: float) -> str:
    if C.shape[0] < C.shape[1]:
        return f"rank-deficient covariates: {C.shape[1]} columns for {C.shape[0]} subjects"
    for j in range(1, C.shape[1]):
        col = C[:, j]
        if np.ptp(col) <= rank_tol * max(1.0, np.abs(col).max()):
            return f"covariate '{columns[j]}' is collinear with intercept"
        sv = np.linalg.svd(C[:, : j + 1], compute_uv=False)
        if sv[-1] <= rank_tol * sv[0]:
            return f"covariate '{columns[j]}' is collinear with preceding columns"
    return "rank-deficient covariates"


def project_onto_covariates(C: CovariateBasis, V) -> np.ndarray:
    """``C (C^T C)^-1 C^T V`` in factored form; V may be a vector or matrix."""
    V = np.asarray(V, dtype=float)
    if V.shape[0] != C.n:
        raise ValidationError(f"V has {V.shape[0]} rows, covariate basis has {C.n}")
    return C.matrix @ (C.gram_inverse @ (C.matrix.T @ V))


def residualize(C: CovariateBasis, V) -> np.ndarray:
    """``(I - P) V``: the part of V orthogonal to the covariate span."""
    V = np.asarray(V, dtype=float)
    return V - project_onto_covariates(C, V)


@dataclass(frozen=True, eq=False)
class ResidualizerFit:
    """Per-feature regression of X on the training covariates (k x d)."""

    coefficients: np.ndarray

    @property
    def k(self) -> int:
        return self.coefficients.shape[0]


def fit_residualizer(X, C: CovariateBasis) -> ResidualizerFit:
    X = _as_finite("X", X, ndim=2)
    if X.shape[0] != C.n:
        raise ValidationError(f"X has {X.shape[0]} rows, covariate basis has {C.n}")
    coef = C.gram_inverse @ (C.matrix.T @ X)
    coef.setflags(write=False)
    return ResidualizerFit(coefficients=coef)


def apply_residualizer(fit: ResidualizerFit, X_new, C_new) -> np.ndarray:
    """Remove covariate effects from new data using the *training* coefficients.

    ``C_new`` is the intercept-augmented covariate matrix of the new subjects.
    """
    X_new = _as_finite("X_new", X_new, ndim=2)
    C_new = np.asarray(C_new.matrix if isinstance(C_new, CovariateBasis) else C_new, dtype=float)
    if C_new.ndim != 2 or C_new.shape[1] != fit.k:
        raise ValidationError(f"covariates have {C_new.shape[-1]} columns, residualizer expects {fit.k}")
    if C_new.shape[0] != X_new.shape[0]:
        raise ValidationError("X_new and C_new row counts differ")
    if X_new.shape[1] != fit.coefficients.shape[1]:
        raise ValidationError("X_new column count differs from the training features")
    return X_new - C_new @ fit.coefficients


@dataclass(frozen=True)
class FeatureScaler:
    """Optional per-feature z-scoring fitted on a training set."""

    mean: np.ndarray
    std: np.ndarray

    def apply(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.std


def fit_feature_scaler(X) -> FeatureScaler:
    X = _as_finite("X", X, ndim=2)
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return FeatureScaler(mean=X.mean(axis=0), std=std)
