"""Evaluation protocols: confounded training scenarios, multi-site transfer, CV.

Three methods are compared throughout:

``gdm``    GDM on raw features with covariates in the model.
``ridge``  ridge on features residualized with training-set coefficients.
``haufe``  the activation pattern of the selected ridge model, used as a
           projection direction with a least-squares calibrated slope.

The +1-coded class (lexicographically larger label) plays the patient role
in scenario construction.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from sklearn.model_selection import StratifiedKFold

from gdm.baselines import fit_ridge, haufe_transform, ridge_scores
from gdm.core import (
    Cohort,
    apply_residualizer,
    build_covariate_basis,
    fit_residualizer,
    standardize_labels,
)
from gdm.errors import ValidationError
from gdm.solver import GdmHyperParams, GdmPath, fit, predict

LAMBDA_GRID = tuple(10.0**e for e in range(-5, 3))
METHODS = ("gdm", "ridge", "haufe")
CASES = {
    1: (0.50, "balanced"),
    2: (0.25, "balanced"),
    3: (0.50, "oldest_patients_youngest_controls"),
    4: (0.25, "oldest_patients_youngest_controls"),
}
AGE_TOL = 0.25  # in units of cohort age std


def default_grid(method: str) -> list:
    if method == "gdm":
        return [GdmHyperParams(l1, l2) for l2 in LAMBDA_GRID for l1 in LAMBDA_GRID]
    if method in ("ridge", "haufe"):
        return [GdmHyperParams(l1, 0.0) for l1 in LAMBDA_GRID]
    raise ValidationError(f"unknown method {method!r}")


# --------------------------------------------------------------------------
# fitted models behind one interface


@dataclass(frozen=True, eq=False)
class FittedMethod:
    method: str
    hyper: GdmHyperParams
    params: np.ndarray
    _predict: object = field(repr=False)

    def predict(self, cohort: Cohort) -> np.ndarray:
        return self._predict(cohort)

    def accuracy(self, cohort: Cohort) -> float:
        return float(np.mean(self.predict(cohort) == cohort.labels_raw))


def _design(cohort: Cohort):
    Y, lt = standardize_labels(cohort.labels_raw, categorical=True)
    C = build_covariate_basis(cohort.covariates_raw, names=cohort.covariate_names, n=cohort.n)
    return Y, lt, C


def fit_method(method: str, cohort: Cohort, hyper: GdmHyperParams,
               decision_space: str = "standardized") -> FittedMethod:
    """Fit one of ``METHODS`` on a training cohort."""
    X = cohort.features
    Y, lt, C = _design(cohort)
    if method == "gdm":
        model = fit(X, Y, C, hyper, label_transform=lt)

        def _pred(c: Cohort):
            scores = predict(model, c.features, C.augment(c.covariates_raw))[0]
            return lt.decode(scores, decision_space)

        return FittedMethod("gdm", hyper, model.J, _pred)

    res = fit_residualizer(X, C)
    Xr = apply_residualizer(res, X, C.matrix)
    rm = fit_ridge(Xr, Y, hyper.lambda1, residualizer=res, label_transform=lt)
    if method == "ridge":

        def _pred(c: Cohort):
            return lt.decode(ridge_scores(rm, c.features, C.augment(c.covariates_raw)), decision_space)

        return FittedMethod("ridge", hyper, rm.w, _pred)
    if method == "haufe":
        pattern = haufe_transform(rm, Xr)
        proj = Xr @ pattern.a
        slope = float(proj @ Y) / float(proj @ proj)

        def _pred(c: Cohort):
            Xn = apply_residualizer(res, c.features, C.augment(c.covariates_raw))
            return lt.decode(slope * (Xn @ pattern.a), decision_space)

        return FittedMethod("haufe", hyper, pattern.a, _pred)
    raise ValidationError(f"unknown method {method!r}")


# --------------------------------------------------------------------------
# cross-validation


@dataclass(frozen=True)
class CvResult:
    best: GdmHyperParams
    mean_accuracy: dict
    folds: int


def _fold_scores(method: str, train: Cohort, val: Cohort, grid, decision_space: str) -> np.ndarray:
    Y, lt, C = _design(train)
    path = GdmPath(train.features, Y, C)
    Cv = C.augment(val.covariates_raw)
    Xv_res = val.features - Cv @ path.coef
    acc = np.empty(len(grid))
    for i, h in enumerate(grid):
        J = path.J(h if method == "gdm" else GdmHyperParams(h.lambda1, 0.0))
        if method == "gdm":
            scores = val.features @ J + Cv @ path.W0(J)
        else:
            scores = Xv_res @ J
        acc[i] = np.mean(lt.decode(scores, decision_space) == val.labels_raw)
    return acc


def cross_validate(cohort: Cohort, method: str, grid: Optional[Sequence] = None, folds: int = 5,
                   seed=0, decision_space: str = "standardized") -> CvResult:
    """Stratified k-fold grid search maximizing mean validation accuracy.

    Ties go to the smaller lambda2, then the smaller lambda1.  ``haufe``
    shares ridge's selection.
    """
    if method == "haufe":
        method = "ridge"
    grid = list(grid) if grid is not None else default_grid(method)
    if not grid:
        raise ValidationError("hyperparameter grid is empty")
    if folds < 2:
        raise ValidationError("folds must be >= 2")
    if len(grid) == 1:
        return CvResult(best=grid[0], mean_accuracy={}, folds=0)

    _, counts = np.unique(cohort.labels_raw, return_counts=True)
    if counts.size < 2 or counts.min() < 2:
        raise ValidationError("cross-validation needs at least 2 subjects per class")
    folds = min(folds, int(counts.min()))
    splitter = StratifiedKFold(n_splits=folds, shuffle=True, random_state=_int_seed(seed))
    total = np.zeros(len(grid))
    for tr, va in splitter.split(np.zeros(cohort.n), cohort.labels_raw):
        total += _fold_scores(method, cohort.subset(tr), cohort.subset(va), grid, decision_space)
    mean = total / folds
    order = sorted(range(len(grid)), key=lambda i: (-round(mean[i], 12), grid[i].lambda2, grid[i].lambda1))
    scores = {(h.lambda1, h.lambda2): float(m) for h, m in zip(grid, mean)}
    return CvResult(best=grid[order[0]], mean_accuracy=scores, folds=folds)


def _int_seed(seed) -> int:
    if isinstance(seed, np.random.SeedSequence):
        return int(seed.generate_state(1)[0])
    return int(seed) % (2**32)


# --------------------------------------------------------------------------
# reproducibility


@dataclass(frozen=True)
class ReproStats:
    cosines: np.ndarray
    mean: float
    std: float


def reproducibility(vectors) -> ReproStats:
    """All pairwise cosine similarities between parameter vectors."""
    V = np.asarray([np.asarray(v, dtype=float) for v in vectors])
    if V.ndim != 2 or V.shape[0] < 2:
        raise ValidationError("need at least two equal-length parameter vectors")
    norms = np.linalg.norm(V, axis=1)
    if np.any(norms == 0):
        raise ValidationError("zero-norm parameter vector")
    U = V / norms[:, None]
    iu = np.triu_indices(V.shape[0], k=1)
    cos = np.clip((U @ U.T)[iu], -1.0, 1.0)
    return ReproStats(cosines=cos, mean=float(cos.mean()), std=float(cos.std()))


# --------------------------------------------------------------------------
# scenario sampling


@dataclass(frozen=True)
class ScenarioSpec:
    case_id: int
    train_fraction: float = 0.4
    test_fraction: Optional[float] = None
    class_ratio: Optional[float] = None
    age_policy: Optional[str] = None
    pool_factor: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.case_id not in CASES:
            raise ValidationError(f"case_id must be one of {sorted(CASES)}")
        ratio, policy = CASES[self.case_id]
        if self.class_ratio is None:
            object.__setattr__(self, "class_ratio", ratio)
        if self.age_policy is None:
            object.__setattr__(self, "age_policy", policy)
        if self.test_fraction is None:
            object.__setattr__(self, "test_fraction", 1.0 - self.train_fraction)
        if (self.class_ratio, self.age_policy) != (ratio, policy):
            raise ValidationError(f"case {self.case_id} is defined as ratio={ratio}, policy={policy}")
        for name in ("train_fraction", "test_fraction", "class_ratio"):
            if not 0 < getattr(self, name) < 1:
                raise ValidationError(f"{name} must lie in (0, 1)")
        if self.train_fraction + self.test_fraction > 1 + 1e-12:
            raise ValidationError("train and test fractions exceed 1")
        if self.pool_factor < 1:
            raise ValidationError("pool_factor must be >= 1")


def _match_controls(p_ages, c_ages, c_idx, n_needed):
    """Pick controls one at a time, each the closest to the age that would put
    the running control mean exactly on the patient mean."""
    if n_needed > len(c_idx):
        raise ValidationError("insufficient controls for age matching")
    target = float(np.mean(p_ages))
    free = np.ones(len(c_idx), dtype=bool)
    chosen = []
    total = 0.0
    for t in range(n_needed):
        ideal = target * (t + 1) - total
        gap = np.where(free, np.abs(c_ages - ideal), np.inf)
        j = int(np.argmin(gap))
        free[j] = False
        chosen.append(c_idx[j])
        total += c_ages[j]
    return np.array(chosen, dtype=int)


def _closest_pairs(p_idx, c_idx, age, m):
    """Greedy global closest-age pairing; returns m (patient, control) pairs."""
    diff = np.abs(age[p_idx][:, None] - age[c_idx][None, :])
    flat = np.argsort(diff, axis=None, kind="stable")
    used_p = np.zeros(len(p_idx), dtype=bool)
    used_c = np.zeros(len(c_idx), dtype=bool)
    pats, ctrls = [], []
    for f in flat:
        i, j = divmod(int(f), len(c_idx))
        if used_p[i] or used_c[j]:
            continue
        used_p[i] = used_c[j] = True
        pats.append(p_idx[i])
        ctrls.append(c_idx[j])
        if len(pats) == m:
            break
    return np.array(pats, dtype=int), np.array(ctrls, dtype=int)


def sample_scenario(cohort: Cohort, spec: ScenarioSpec, rng=None):
    """Draw (train_idx, test_idx) for one confounding scenario.

    Training: ``class_ratio`` patients, with either age-matched controls or the
    oldest patients and youngest controls of a random pool.  Test: equal class
    counts, closest-age pairs from the remaining subjects.
    """
    rng = np.random.default_rng(spec.seed if rng is None else rng)
    age = cohort.covariate("age")
    _, lt = standardize_labels(cohort.labels_raw, categorical=True)
    code = lt.encode(cohort.labels_raw)
    patients = np.flatnonzero(code > 0)
    controls = np.flatnonzero(code < 0)
    n_train = int(round(spec.train_fraction * cohort.n))
    n_tr_p = int(round(spec.class_ratio * n_train))
    n_tr_c = n_train - n_tr_p
    if n_tr_p < 2 or n_tr_c < 2 or n_tr_p > len(patients) or n_tr_c > len(controls):
        raise ValidationError(
            f"insufficient subjects: need {n_tr_p} patients / {n_tr_c} controls, "
            f"have {len(patients)} / {len(controls)}"
        )

    if spec.age_policy == "balanced":
        tr_p = rng.choice(patients, size=n_tr_p, replace=False)
        pool_c = rng.permutation(controls)
        tr_c = _match_controls(age[tr_p], age[pool_c], pool_c, n_tr_c)
    else:
        pool_p = rng.choice(patients, size=min(len(patients), math.ceil(spec.pool_factor * n_tr_p)), replace=False)
        pool_c = rng.choice(controls, size=min(len(controls), math.ceil(spec.pool_factor * n_tr_c)), replace=False)
        tr_p = pool_p[np.argsort(-age[pool_p], kind="stable")[:n_tr_p]]
        tr_c = pool_c[np.argsort(age[pool_c], kind="stable")[:n_tr_c]]
    train = np.sort(np.r_[tr_p, tr_c])

    rest_p = rng.permutation(np.setdiff1d(patients, tr_p))
    rest_c = rng.permutation(np.setdiff1d(controls, tr_c))
    m = min(int(spec.test_fraction * cohort.n) // 2, len(rest_p), len(rest_c))
    if m < 1:
        raise ValidationError("insufficient subjects left for a balanced test set")
    tol = AGE_TOL * age.std()
    te_p, te_c = _closest_pairs(rest_p, rest_c, age, m)
    # longest prefix of the greedy pairing whose mean ages agree within tol
    drift = np.abs(np.cumsum(age[te_p] - age[te_c]) / np.arange(1, len(te_p) + 1))
    ok = np.flatnonzero(drift <= tol)
    if ok.size == 0 or ok.max() < 1:
        raise ValidationError("could not age-balance the test set")
    te_p, te_c = te_p[: ok.max() + 1], te_c[: ok.max() + 1]
    test = np.sort(np.r_[te_p, te_c])
    if spec.age_policy == "balanced" and abs(age[tr_p].mean() - age[tr_c].mean()) > tol:
        raise ValidationError("could not age-balance the training set")
    return train, test


# --------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    method_id: str
    per_repeat_accuracy: np.ndarray
    pairwise_reproducibility: np.ndarray
    chosen_hyperparams: list
    metadata: dict = field(default_factory=dict)

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.per_repeat_accuracy))

    @property
    def mean_reproducibility(self) -> float:
        return float(np.mean(self.pairwise_reproducibility))

    def to_dict(self) -> dict:
        return {
            "method_id": self.method_id,
            "per_repeat_accuracy": [float(a) for a in self.per_repeat_accuracy],
            "pairwise_reproducibility": [float(c) for c in self.pairwise_reproducibility],
            "chosen_hyperparams": [asdict(h) for h in self.chosen_hyperparams],
            "summary": {
                "mean_accuracy": self.mean_accuracy,
                "std_accuracy": float(np.std(self.per_repeat_accuracy)),
                "mean_reproducibility": self.mean_reproducibility,
                "std_reproducibility": float(np.std(self.pairwise_reproducibility)),
            },
            "metadata": self.metadata,
        }


def _fit_all(train: Cohort, methods, cv_seed, grids, folds, decision_space):
    """CV + fit for each method on one training set; haufe reuses ridge's CV."""
    fitted = {}
    cv_cache = {}
    for method in methods:
        key = "gdm" if method == "gdm" else "ridge"
        if key not in cv_cache:
            grid = grids.get(key) if grids else None
            cv_cache[key] = cross_validate(train, key, grid=grid, folds=folds, seed=cv_seed,
                                           decision_space=decision_space).best
        fitted[method] = fit_method(method, train, cv_cache[key], decision_space)
    return fitted


def _run_parallel(fn, items, n_jobs):
    if n_jobs == 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=n_jobs) as ex:
        return list(ex.map(fn, items))


def _repeat_seeds(seed, repeats):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(repeats)]


def repeated_holdout(cohort: Cohort, spec: ScenarioSpec, methods=METHODS, repeats: int = 100,
                     seed=0, *, grids: Optional[dict] = None, folds: int = 5, n_jobs: int = 1,
                     repeat_seeds: Optional[Sequence[int]] = None,
                     decision_space: str = "standardized") -> dict:
    """Resample the scenario ``repeats`` times; returns ``{method: EvalReport}``."""
    if repeats < 2:
        raise ValidationError("repeats must be >= 2")
    seeds = list(repeat_seeds) if repeat_seeds is not None else _repeat_seeds(seed, repeats)
    if len(seeds) != repeats:
        raise ValidationError("repeat_seeds length must equal repeats")

    def one(s):
        rng = np.random.default_rng(s)
        train_idx, test_idx = sample_scenario(cohort, spec, rng)
        train, test = cohort.subset(train_idx), cohort.subset(test_idx)
        fitted = _fit_all(train, methods, s, grids, folds, decision_space)
        return {m: (f.accuracy(test), f.params, f.hyper) for m, f in fitted.items()}

    results = _run_parallel(one, seeds, n_jobs)
    meta = {"protocol": "scenario", "scenario": asdict(spec), "repeats": repeats, "seed": seed,
            "folds": folds, "selection_criterion": "mean validation accuracy",
            "decision_space": decision_space}
    return {m: _report(m, [r[m] for r in results], meta) for m in methods}


def _report(method, rows, meta) -> EvalReport:
    acc = np.array([r[0] for r in rows])
    rep = reproducibility([r[1] for r in rows])
    return EvalReport(method_id=method, per_repeat_accuracy=acc, pairwise_reproducibility=rep.cosines,
                      chosen_hyperparams=[r[2] for r in rows], metadata=dict(meta))


def _check_site_labels(cohort: Cohort, sites):
    classes = sorted(set(cohort.labels_raw.tolist()))
    if len(classes) != 2:
        raise ValidationError(f"label coding mismatch: {len(classes)} distinct labels across sites")
    for s in sites:
        present = sorted(set(cohort.labels_raw[cohort.site == s].tolist()))
        if present != classes:
            raise ValidationError(f"label coding mismatch at site {s!r}: {present} vs {classes}")


def multi_site_protocol(cohort: Cohort, methods=METHODS, resamples: int = 100, train_fraction: float = 0.9,
                        seed=0, *, grids: Optional[dict] = None, folds: int = 5, n_jobs: int = 1,
                        decision_space: str = "standardized") -> dict:
    """Train on a resampled fraction of one site, test on every other site.

    Returns ``{(train_site, test_site): {method: EvalReport}}``; reports with
    ``test_site == train_site`` hold the accuracy on the held-out remainder of
    the training site.
    """
    if cohort.site is None:
        raise ValidationError("multi-site protocol needs site tags")
    sites = cohort.sites()
    if len(sites) < 2:
        raise ValidationError("multi-site protocol needs at least two sites")
    if resamples < 2:
        raise ValidationError("resamples must be >= 2")
    if not 0 < train_fraction < 1:
        raise ValidationError("train_fraction must lie in (0, 1)")
    _check_site_labels(cohort, sites)
    others = {s: cohort.subset(np.flatnonzero(cohort.site == s)) for s in sites}
    site_seeds = np.random.SeedSequence(seed).spawn(len(sites))
    out = {}
    for s, ss in zip(sites, site_seeds):
        idx = np.flatnonzero(cohort.site == s)
        seeds = [int(x.generate_state(1)[0]) for x in ss.spawn(resamples)]

        def one(rs, idx=idx):
            rng = np.random.default_rng(rs)
            train_idx, held_idx = _stratified_subsample(cohort.labels_raw[idx], train_fraction, rng)
            train = cohort.subset(idx[train_idx])
            fitted = _fit_all(train, methods, rs, grids, folds, decision_space)
            row = {}
            for m, f in fitted.items():
                accs = {t: f.accuracy(others[t]) for t in sites if t != s}
                if len(held_idx):
                    accs[s] = f.accuracy(cohort.subset(idx[held_idx]))
                row[m] = (accs, f.params, f.hyper)
            return row

        results = _run_parallel(one, seeds, n_jobs)
        for t in sites:
            if t == s and not all(t in r[methods[0]][0] for r in results):
                continue
            meta = {"protocol": "multisite", "train_site": s, "test_site": t, "resamples": resamples,
                    "train_fraction": train_fraction, "seed": seed, "folds": folds,
                    "selection_criterion": "mean validation accuracy", "decision_space": decision_space}
            out[(s, t)] = {
                m: _report(m, [(r[m][0][t], r[m][1], r[m][2]) for r in results], meta) for m in methods
            }
    return out


def _stratified_subsample(labels, fraction, rng):
    keep = []
    for cls in sorted(set(labels.tolist())):
        members = np.flatnonzero(labels == cls)
        k = max(2, int(round(fraction * len(members))))
        keep.append(rng.choice(members, size=min(k, len(members)), replace=False))
    keep = np.sort(np.concatenate(keep))
    held = np.setdiff1d(np.arange(len(labels)), keep)
    return keep, held
