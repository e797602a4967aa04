import numpy as np
import pytest

from rfbsde import (SpaceTimeGrid, example_classical, example_viscosity,
                    solve_obstacle_hjb, zero_model)


@pytest.fixture(scope="session")
def classical_model():
    return example_classical()


@pytest.fixture(scope="session")
def viscosity_model():
    return example_viscosity()


@pytest.fixture(scope="session")
def classical_surface(classical_model):
    grid = SpaceTimeGrid(horizon=1.0, x_min=0.1, x_max=5.0,
                         t_steps=400, x_steps=100)
    return solve_obstacle_hjb(classical_model, grid)


@pytest.fixture(scope="session")
def viscosity_surface(viscosity_model):
    grid = SpaceTimeGrid(horizon=1.0, x_min=-5.0, x_max=5.0,
                         t_steps=800, x_steps=100)
    return solve_obstacle_hjb(viscosity_model, grid)


@pytest.fixture(scope="session")
def zero_surface():
    model = zero_model()
    grid = SpaceTimeGrid(horizon=1.0, x_min=-2.0, x_max=2.0,
                         t_steps=50, x_steps=40)
    return model, solve_obstacle_hjb(model, grid)
