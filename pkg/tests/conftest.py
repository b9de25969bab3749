"""Shared fixtures: the model catalog used across the test modules."""

import numpy as np
import pytest

from affineflow.models import make_cir, make_heston_like, make_levy, make_nonaffine_control

CATALOG_PARAMS = {
    "levy": dict(drift=[0.1, -0.2], cov=[[0.9, 0.2], [0.2, 0.6]]),
    "cir": dict(a=1.0, b=1.0, sigma=1.0),
    "heston": dict(a=0.4, b=0.6, sigma=0.5, rho=-0.5),
}


@pytest.fixture(scope="session")
def levy():
    return make_levy(**CATALOG_PARAMS["levy"])


@pytest.fixture(scope="session")
def cir():
    return make_cir(**CATALOG_PARAMS["cir"])


@pytest.fixture(scope="session")
def heston0():
    """Heston-like model with the free component semihomogeneous (lam = 0)."""
    return make_heston_like(lam=0.0, **CATALOG_PARAMS["heston"])


@pytest.fixture(scope="session")
def heston1():
    """Heston-like model with mean reversion in the free component (lam = 1)."""
    return make_heston_like(lam=1.0, **CATALOG_PARAMS["heston"])


@pytest.fixture(scope="session")
def control():
    return make_nonaffine_control()


@pytest.fixture(scope="session")
def catalog(levy, cir, heston0, heston1):
    return {"levy": levy, "cir": cir, "heston0": heston0, "heston1": heston1}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
