import numpy as np
import pytest

from hypokernel.models import builtin_model


@pytest.fixture(scope="session")
def pure_stable():
    return builtin_model("pure-stable", alpha=1.0, dim=1)


@pytest.fixture(scope="session")
def kinetic():
    return builtin_model("kinetic")


@pytest.fixture(scope="session")
def degenerate():
    return builtin_model("degenerate-control")


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
