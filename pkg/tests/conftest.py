import numpy as np
import pytest

from driftlab.kernels import KernelSpec

FAMILY_SPECS = [
    ("laplace", 0.5, None),
    ("laplace", 1.0, None),
    ("laplace", 2.0, None),
    ("gaussian", 0.5, None),
    ("gaussian", 1.0, None),
    ("gaussian", 2.0, None),
    ("matern", 1.0, 0.5),
    ("matern", 1.0, 1.0),
    ("matern", 0.7, 1.5),
    ("matern", 1.3, 2.5),
]


def make_spec(family, scale, nu, dim=1):
    return KernelSpec(family, scale, dim, nu)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
