import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_addoption(parser):
    parser.addoption(
        "--skip-training",
        action="store_true",
        default=False,
        help="skip the long desk-scale training acceptance tests",
    )
