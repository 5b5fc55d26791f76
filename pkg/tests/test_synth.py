import numpy as np
import pytest
from scipy.stats import kstest

from gdm.baselines import fit_ridge, ridge_null
from gdm.core import build_covariate_basis, residualize, standardize_labels
from gdm.errors import ValidationError
from gdm.harness import fit_method
from gdm.inference import analytic_null, analytic_pvalues, bh_fdr, build_q_matrix
from gdm.solver import GdmHyperParams, fit
from gdm.synth import (
    AGE_HIGH,
    AGE_LOW,
    STANDARD_CONFOUNDED,
    STANDARD_MULTISITE,
    GeneratorSpec,
    GroundTruth,
    generate,
)


def _design(cohort):
    Y, lt = standardize_labels(cohort.labels_raw)
    C = build_covariate_basis(cohort.covariates_raw, names=cohort.covariate_names)
    return cohort.features, Y, C


def test_generation_is_deterministic():
    spec = GeneratorSpec(n_per_site=(30, 40), d=12, n_effect=3, site_offsets_amplitude=0.5, seed=4)
    a, ta = generate(spec)
    b, tb = generate(spec)
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.labels_raw, b.labels_raw)
    np.testing.assert_array_equal(ta.beta_true, tb.beta_true)
    c, _ = generate(GeneratorSpec(n_per_site=(30, 40), d=12, n_effect=3, seed=5))
    assert not np.array_equal(a.features, c.features)


def test_cohort_layout():
    c, t = generate(GeneratorSpec(n_per_site=(20, 25), d=7, n_effect=2, seed=1))
    assert (c.n, c.d) == (45, 7)
    assert c.covariate_names == ("age", "sex")
    assert c.sites() == ["site1", "site2"]
    assert c.feature_names[0] == "roi001"
    assert set(c.labels_raw.tolist()) == {"patient", "control"}
    age = c.covariate("age")
    assert age.min() >= AGE_LOW and age.max() <= AGE_HIGH
    assert set(np.unique(c.covariate("sex"))) <= {0.0, 1.0}
    assert t.truly_associated.sum() == 2
    single, _ = generate(GeneratorSpec(n_per_site=(20,), d=3, n_effect=1))
    assert single.site is None


@pytest.mark.parametrize(
    "kw, match",
    [
        ({"n_per_site": (3,)}, "at least 4"),
        ({"d": 0}, "d must be"),
        ({"n_effect": 0}, "n_effect"),
        ({"effect_pattern": "wavy"}, "effect pattern"),
        ({"noise_std": -1.0}, ">= 0"),
        ({"patient_fraction": 1.0}, "patient_fraction"),
    ],
)
def test_spec_validation(kw, match):
    with pytest.raises(ValidationError, match=match):
        GeneratorSpec(**kw)


def test_smooth_effect_is_a_contiguous_block():
    _, t = generate(GeneratorSpec(n_per_site=(10,), d=40, effect_pattern="smooth", n_effect=9, seed=2))
    idx = np.flatnonzero(t.truly_associated)
    assert len(idx) == 9 and np.all(np.diff(idx) == 1)
    assert np.all(t.beta_true[idx] > 0)


def test_noiseless_cohort_is_separable():
    spec = GeneratorSpec(n_per_site=(40,), d=10, n_effect=3, noise_std=0.0, seed=3)
    c, t = generate(spec)
    g = np.where(c.labels_raw == "patient", 1.0, -1.0)
    np.testing.assert_array_equal(c.features, np.outer(g, t.beta_true))
    for method in ("gdm", "ridge", "haufe"):
        assert fit_method(method, c, GdmHyperParams(1.0, 1.0)).accuracy(c) == 1.0


def test_class_means_converge():
    spec = GeneratorSpec(n_per_site=(10_000,), d=20, n_effect=5, effect_amplitude=0.5, seed=6)
    c, t = generate(spec)
    g = t.group
    for sign in (-1.0, 1.0):
        mean = c.features[g == sign].mean(axis=0)
        np.testing.assert_allclose(mean, sign * t.beta_true, atol=0.05)
    resid = c.features - np.outer(g, t.beta_true)
    cov = np.cov(resid, rowvar=False)
    np.testing.assert_allclose(np.diag(cov), 1.0, atol=0.05)


def test_null_cohort_gives_uniform_pvalues():
    c, _ = generate(GeneratorSpec(n_per_site=(200,), d=500, n_effect=1, effect_amplitude=0.0, seed=9))
    X, Y, C = _design(c)
    h = GdmHyperParams(1.0, 1.0)
    p = analytic_pvalues(fit(X, Y, C, h).J, analytic_null(build_q_matrix(X, Y, C, h)))
    assert kstest(p, "uniform").statistic < 0.1


def test_precision_recall():
    t = GroundTruth(beta_true=np.array([1.0, 0, 1, 0]), beta_age=np.zeros(4), site_offsets={},
                    truly_associated=np.array([True, False, True, False]), group=np.ones(4))
    assert t.precision_recall([True, True, False, False]) == (0.5, 0.5)
    assert t.precision_recall([False] * 4) == (1.0, 0.0)


def test_confounded_features_mislead_unadjusted_ridge():
    jac_gdm, jac_ridge = [], []
    for seed in range(4):
        spec = GeneratorSpec(n_per_site=(300,), d=100, n_effect=10, effect_amplitude=0.5,
                             age_effect_amplitude=0.5, age_group_coupling=15.0, seed=seed)
        c, t = generate(spec)
        X, Y, C = _design(c)
        h = GdmHyperParams(0.01, 0.01)
        rej = bh_fdr(analytic_pvalues(fit(X, Y, C, h).J, analytic_null(build_q_matrix(X, Y, C, h))), 0.05)
        Xc = residualize(build_covariate_basis(None, n=c.n), X)  # intercept only: age left in
        rr = bh_fdr(analytic_pvalues(fit_ridge(Xc, Y, 0.01).w, ridge_null(Xc, 0.01)), 0.05)
        truth = t.truly_associated
        jac_gdm.append((rej & truth).sum() / max(1, (rej | truth).sum()))
        jac_ridge.append((rr & truth).sum() / max(1, (rr | truth).sum()))
    assert np.mean(jac_gdm) > np.mean(jac_ridge)


def test_standard_cohorts_match_reference_shapes():
    c, _ = generate(STANDARD_CONFOUNDED)
    assert (c.n, c.d) == (415, 151)
    m, _ = generate(STANDARD_MULTISITE)
    assert m.n == 236 + 286 + 331 and len(m.sites()) == 3
    assert STANDARD_CONFOUNDED.to_dict()["seed"] == 2018
