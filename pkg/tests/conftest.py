import numpy as np
import pytest

from ocppe.data import Dataset
from ocppe.simulation import DgpConfig, dgp_sample


@pytest.fixture(scope="session")
def small_data():
    """n = 400 draws of the benchmark design with 3 controls."""
    return dgp_sample(DgpConfig(n=400, p_x=3, seed=5))


@pytest.fixture(scope="session")
def small_process(small_data):
    from ocppe.basis import BasisSpec
    from ocppe.score import EstimatorConfig, ProcessFit

    cfg = EstimatorConfig(basis=BasisSpec(degree=2))
    return ProcessFit(small_data, [(0.2, 0.4), (0.4, 0.6)], cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_dataset(n=100, p=2, seed=0):
    r = np.random.default_rng(seed)
    x = r.standard_normal((n, p))
    d = x[:, 0] + r.standard_normal(n)
    y = d + x.sum(axis=1) + r.standard_normal(n)
    return Dataset(y, d, x)
