"""Generative-discriminative machine: closed-form fits and analytic inference."""

from gdm.core import (
    Cohort,
    CovariateBasis,
    LabelTransform,
    ResidualizerFit,
    apply_residualizer,
    build_covariate_basis,
    fit_residualizer,
    project_onto_covariates,
    standardize_labels,
)
from gdm.errors import ComputationError, GdmError, ValidationError
from gdm.solver import GdmHyperParams, GdmModel, fit, fit_dual, fit_primal, gdm_objective, predict

__version__ = "0.1.0"
