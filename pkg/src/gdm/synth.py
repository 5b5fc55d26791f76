"""Synthetic two-group cohorts with known ground truth.

Linear-Gaussian generator::

    x = g * beta_true + ((age - 72.5) / 10) * beta_age + offset[site] + noise

with group g in {-1 (control), +1 (patient)}, age uniform on [55, 90] plus
``age_group_coupling`` years for patients, and sex ~ Bernoulli(0.5) (recorded as
a covariate, no feature effect).  ``beta_age`` is per decade of age.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from gdm.core import Cohort
from gdm.errors import ValidationError

AGE_LOW, AGE_HIGH = 55.0, 90.0
AGE_CENTER, AGE_SCALE = 72.5, 10.0
PATIENT, CONTROL = "patient", "control"


@dataclass(frozen=True)
class GeneratorSpec:
    n_per_site: tuple = (415,)
    d: int = 151
    effect_pattern: str = "sparse"
    n_effect: int = 15
    effect_amplitude: float = 0.5
    age_effect_amplitude: float = 0.0
    age_group_coupling: float = 0.0
    site_offsets_amplitude: float = 0.0
    noise_std: float = 1.0
    patient_fraction: float = 0.5
    latent_factors: int = 0
    latent_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "n_per_site", tuple(int(v) for v in self.n_per_site))
        if not self.n_per_site or min(self.n_per_site) < 4:
            raise ValidationError("every site needs at least 4 subjects")
        if self.d < 1:
            raise ValidationError("d must be >= 1")
        if self.effect_pattern not in ("sparse", "smooth"):
            raise ValidationError(f"unknown effect pattern {self.effect_pattern!r}")
        if not 1 <= self.n_effect <= self.d:
            raise ValidationError("n_effect must lie in [1, d]")
        amps = (self.effect_amplitude, self.age_effect_amplitude, self.site_offsets_amplitude,
                self.noise_std, self.latent_std)
        if min(amps) < 0 or self.age_group_coupling < 0:
            raise ValidationError("amplitudes must be >= 0")
        if not 0 < self.patient_fraction < 1:
            raise ValidationError("patient_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    beta_true: np.ndarray
    beta_age: np.ndarray
    site_offsets: dict
    truly_associated: np.ndarray
    group: np.ndarray
    loadings: Optional[np.ndarray] = field(default=None)

    def precision_recall(self, rejected) -> tuple:
        rejected = np.asarray(rejected, dtype=bool)
        tp = int(np.sum(rejected & self.truly_associated))
        precision = tp / rejected.sum() if rejected.any() else 1.0
        recall = tp / self.truly_associated.sum()
        return float(precision), float(recall)


def effect_vector(spec: GeneratorSpec, rng: np.random.Generator) -> np.ndarray:
    beta = np.zeros(spec.d)
    if spec.effect_pattern == "sparse":
        support = np.sort(rng.choice(spec.d, size=spec.n_effect, replace=False))
        beta[support] = spec.effect_amplitude * rng.choice([-1.0, 1.0], size=spec.n_effect)
    else:
        start = int(rng.integers(0, spec.d - spec.n_effect + 1))
        bump = np.hanning(spec.n_effect + 2)[1:-1]
        beta[start:start + spec.n_effect] = spec.effect_amplitude * bump
    return beta


def generate(spec: GeneratorSpec):
    """Draw a cohort and its ground-truth record; deterministic in ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    beta_true = effect_vector(spec, rng)
    beta_age = spec.age_effect_amplitude * rng.standard_normal(spec.d)
    n_sites = len(spec.n_per_site)
    site_names = [f"site{j + 1}" for j in range(n_sites)]
    offsets = {s: spec.site_offsets_amplitude * rng.standard_normal(spec.d) for s in site_names}
    loadings = None
    if spec.latent_factors > 0:
        loadings = spec.latent_std * rng.standard_normal((spec.latent_factors, spec.d))

    n = sum(spec.n_per_site)
    group = np.empty(n)
    site = np.empty(n, dtype=object)
    start = 0
    for name, m in zip(site_names, spec.n_per_site):
        n_pat = int(round(spec.patient_fraction * m))
        n_pat = min(max(n_pat, 1), m - 1)
        g = np.r_[np.ones(n_pat), -np.ones(m - n_pat)]
        group[start:start + m] = rng.permutation(g)
        site[start:start + m] = name
        start += m

    age = rng.uniform(AGE_LOW, AGE_HIGH, size=n) + spec.age_group_coupling * (group > 0)
    sex = rng.integers(0, 2, size=n).astype(float)
    noise = spec.noise_std * rng.standard_normal((n, spec.d))
    X = np.outer(group, beta_true) + np.outer((age - AGE_CENTER) / AGE_SCALE, beta_age) + noise
    X += np.array([offsets[s] for s in site])
    if loadings is not None:
        X += rng.standard_normal((n, spec.latent_factors)) @ loadings

    width = len(str(n))
    cohort = Cohort(
        features=X,
        labels_raw=np.where(group > 0, PATIENT, CONTROL),
        covariates_raw=np.column_stack([age, sex]),
        covariate_names=("age", "sex"),
        feature_names=tuple(f"roi{j + 1:03d}" for j in range(spec.d)),
        subject_ids=tuple(f"sub{i:0{width}d}" for i in range(n)),
        site=site.astype(str) if n_sites > 1 else None,
    )
    truth = GroundTruth(beta_true=beta_true, beta_age=beta_age, site_offsets=offsets,
                        truly_associated=beta_true != 0, group=group, loadings=loadings)
    return cohort, truth


# Shipped reference cohorts.  Sizes and class balance follow the two clinical
# cohorts the method was designed for (415 subjects with 45% patients; three
# sites of 236/286/331 with 47% patients); signal strengths are fixed here once.
STANDARD_CONFOUNDED = GeneratorSpec(
    n_per_site=(415,),
    effect_amplitude=0.5,
    age_effect_amplitude=0.5,
    age_group_coupling=2.0,
    patient_fraction=0.45,
    seed=2018,
)
STANDARD_MULTISITE = GeneratorSpec(
    n_per_site=(236, 286, 331),
    effect_amplitude=0.4,
    age_effect_amplitude=0.5,
    site_offsets_amplitude=0.5,
    patient_fraction=0.47,
    seed=2018,
)
