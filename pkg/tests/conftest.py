import numpy as np
import pytest

from metacv.datasets import load_dataset
from metacv.model import Dataset, build_design_matrix
from metacv.regression import fit

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def bcg():
    return load_dataset("bcg")


@pytest.fixture(scope="session")
def bcg_ablat(bcg):
    return bcg.select("ablat")


@pytest.fixture(scope="session")
def bcg_fit(bcg_ablat):
    return fit(bcg_ablat, build_design_matrix(bcg_ablat), "DL")


def random_dataset(rng, k, beta=(0.5, -0.8), tau2=0.05, x_range=(0.0, 1.0)):
    """Meta-regression data on one numeric moderator, drawn from the model."""
    x = rng.uniform(*x_range, size=k)
    v = rng.uniform(0.01, 0.1, size=k)
    y = beta[0] + beta[1] * x + rng.normal(0.0, np.sqrt(tau2 + v))
    return Dataset.from_arrays(y, v, {"x": x})
