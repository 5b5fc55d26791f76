import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from gdm.core import build_covariate_basis, standardize_labels

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

ACCEPTANCE_LINES = []


def make_instance(rng, n, d, k_raw, binary=True):
    """Random (X, Y, C) with standardized labels and an intercept-augmented basis."""
    X = rng.standard_normal((n, d))
    if binary:
        raw = np.r_[np.zeros(n // 2), np.ones(n - n // 2)]
        raw = rng.permutation(raw)
    else:
        raw = rng.standard_normal(n)
    Y, _ = standardize_labels(raw, categorical=binary)
    C = build_covariate_basis(rng.standard_normal((n, k_raw)) if k_raw else None, n=n)
    return X, Y, C


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
