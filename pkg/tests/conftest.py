import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "repo", max_examples=40, deadline=None, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


@pytest.fixture(scope="session")
def tiny_dataset():
    """Two 2x2 regions, n=2, T=10: the smallest instance the engine accepts."""
    from tensorfmri.simulate import SimSpec, generate_dataset, simulation_rng

    spec = SimSpec(
        n_subjects=2, n_time=10, n_regions=2, ndim=2, period=6,
        dims=[(2, 2), (2, 2)], activation_cap=0.3, pairs=[(0, 1, 0.5)], hrf_length=8,
    )
    return generate_dataset(spec, simulation_rng(3))


@pytest.fixture(scope="session")
def small_dataset():
    """Three small 3-D regions; fast enough for many short chains."""
    from tensorfmri.simulate import SimSpec, generate_dataset, simulation_rng

    spec = SimSpec(
        n_subjects=4, n_time=30, n_regions=3, ndim=3, period=10,
        dims=[(4, 4, 3), (3, 4, 4), (4, 3, 3)], activation_cap=0.2, pairs=[(0, 1, 0.8)],
    )
    return generate_dataset(spec, simulation_rng(11))
