from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from mfcert import models

settings.register_profile("mfcert", deadline=None, max_examples=30, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("mfcert")

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"
GAUSS_PAIR = np.array([[1.5, -0.5], [-0.5, 1.5]])


@pytest.fixture
def gauss_pair():
    """Pairwise form of the precision [[1.5, -0.5], [-0.5, 1.5]]."""
    return models.PairwiseGibbs(models.gaussian_well(1.0), models.neg_quadratic_kernel(), [[0, 0.5], [0.5, 0]])


@pytest.fixture
def gauss_quadratic():
    return models.QuadraticModel(GAUSS_PAIR)


@pytest.fixture
def quartic_chain():
    return models.PairwiseGibbs(models.quartic_well(1.0, 1.0), models.neg_sqrt_kernel(), [[0, 1, 0], [1, 0, 1], [0, 1, 0]])


@pytest.fixture
def fixtures_dir():
    return FIXTURES
