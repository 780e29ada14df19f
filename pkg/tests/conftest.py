import numpy as np
import pytest

from config.settings import DiscretizationConfig


@pytest.fixture
def coarse_cfg() -> DiscretizationConfig:
    """Grids coarse enough for randomized property checks"""
    return DiscretizationConfig(pld_grid=1e-3, sensitivity_grid=1e-2, inverse_tolerance=1e-5)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)
