import numpy as np
import pytest

from axicollapse.background import SchwarzschildParams
from axicollapse.grids import AngularGrid, make_radial_grid
from axicollapse.initial_data import make_perturbed_data
from axicollapse.iteration import picard_step, schwarzschild_state

PARAMS = SchwarzschildParams(1.0, 0.25)


@pytest.fixture(scope="session")
def small_setup():
    ang = AngularGrid(16, 12, 2 * np.pi)
    grid = make_radial_grid(0.25, 0.25e-4, 240).with_head(8)
    return PARAMS, grid, ang


@pytest.fixture(scope="session")
def base_state(small_setup):
    params, grid, ang = small_setup
    data = make_perturbed_data(params, ang, 0.0)
    return schwarzschild_state(params, grid, ang, data), data


@pytest.fixture(scope="session")
def eta_run(small_setup):
    """Three picard steps at eta = 1e-2 on the small grid."""
    params, grid, ang = small_setup
    data = make_perturbed_data(params, ang, 1e-2)
    states = [schwarzschild_state(params, grid, ang, data)]
    for _ in range(3):
        states.append(picard_step(states[-1], data))
    return states, data
