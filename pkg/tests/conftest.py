import numpy as np
import pytest

from cbolab.model import CboParams, make_cutoff, quadratic_objective


@pytest.fixture(scope="session")
def benchmark_obj():
    return quadratic_objective(0.0)


@pytest.fixture(scope="session")
def benchmark_bump():
    return make_cutoff(center=np.zeros(1), inner_radius=0.5)


def make_benchmark_params(**overrides):
    base = dict(
        dim=1,
        lambda_=5.0,
        sigma=0.3,
        alpha=0.5,
        c0=np.zeros(1),
        r_cut=0.5,
        dt=2e-4,
        horizon=0.2,
        snapshot_times=(0.0, 0.1, 0.2),
        n_particles=32,
    )
    base.update(overrides)
    return CboParams(**base)


@pytest.fixture(scope="session")
def benchmark_params():
    return make_benchmark_params()
