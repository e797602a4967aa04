import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rfbsde import (OpenLoopControl, SimulationError, TimeGrid, moment_check,
                    simulate_closed_loop, simulate_paths)
from rfbsde.model import ControlSet, ControlModel, example_classical, example_viscosity
from rfbsde.simulate import write_ensemble_csv


def _flat_model():
    return ControlModel(
        name="flat", drift=lambda r, x, u: 0.0 * x, diffusion=lambda r, x, u: 0.0 * x,
        driver=lambda r, x, y, z, u: 0.0 * y, terminal=lambda x: 0.0 * x,
        obstacle=lambda r, x: np.ones_like(np.asarray(x, dtype=float)),
        control_set=ControlSet.interval(0.0, 1.0, 3), horizon=1.0)


def test_zero_dynamics_paths_constant():
    ens = simulate_paths(_flat_model(), 0.0, 0.7, OpenLoopControl.constant(0.0),
                         TimeGrid(0.0, 1.0, 20), 50, seed=1)
    assert np.all(ens.states == 0.7)


def test_classical_mean_matches_growth_ode(classical_model):
    # under zero control the state mean solves m' = m, so E X(1) = e
    ens = simulate_paths(classical_model, 0.0, 1.0, OpenLoopControl.constant(0.0),
                         TimeGrid(0.0, 1.0, 200), 100000, seed=11)
    terminal = ens.states[:, -1]
    se = terminal.std(ddof=1) / math.sqrt(len(terminal))
    assert abs(terminal.mean() - math.e) <= 3 * se + 0.01


def test_viscosity_zero_start_stays_zero(viscosity_model):
    ens = simulate_paths(viscosity_model, 0.0, 0.0, OpenLoopControl.constant(1.0),
                         TimeGrid(0.0, 1.0, 100), 200, seed=2)
    assert np.all(ens.states == 0.0)


def test_seed_determinism(classical_model):
    kw = dict(start_time=0.0, start_state=1.0,
              control=OpenLoopControl.constant(0.5),
              grid=TimeGrid(0.0, 1.0, 50), n_paths=100, seed=42)
    a = simulate_paths(classical_model, **kw)
    b = simulate_paths(classical_model, **kw)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.increments, b.increments)


def test_closed_loop_equals_open_loop_for_constant_law(classical_model):
    grid = TimeGrid(0.0, 1.0, 64)
    open_loop = simulate_paths(classical_model, 0.0, 1.0,
                               OpenLoopControl.constant(0.25), grid, 128, seed=9)
    closed = simulate_closed_loop(classical_model, lambda t, x: 0.25, 0.0, 1.0,
                                  grid, 128, seed=9)
    assert np.array_equal(open_loop.states, closed.states)
    assert np.array_equal(open_loop.controls, closed.controls)


def test_closed_loop_strong_error_shrinks(classical_model):
    # exact flow under zero control: x * exp((s-t)/2 + B(s)-B(t))
    def rms_error(steps, seed=5):
        grid = TimeGrid(0.0, 1.0, steps)
        ens = simulate_closed_loop(classical_model, lambda t, x: 0.0, 0.0, 1.0,
                                   grid, 2000, seed=seed)
        brownian = np.cumsum(ens.increments, axis=1)
        exact = np.exp(0.5 * grid.nodes[1:] + brownian)
        err = ens.states[:, 1:] - exact
        return float(np.sqrt(np.mean(err[:, -1] ** 2)))

    coarse, fine = rms_error(50), rms_error(200)
    assert fine < 0.5
    assert coarse / fine >= 1.5          # strong order ~1/2: ratio ~ 2


def test_zero_diffusion_euler_first_order(classical_model):
    drifted = ControlModel(
        name="ode", drift=classical_model.drift,
        diffusion=lambda r, x, u: 0.0 * np.asarray(x, dtype=float),
        driver=classical_model.driver, terminal=classical_model.terminal,
        obstacle=classical_model.obstacle,
        control_set=classical_model.control_set, horizon=1.0)

    def err(steps):
        ens = simulate_paths(drifted, 0.0, 1.0, OpenLoopControl.constant(0.0),
                             TimeGrid(0.0, 1.0, steps), 1, seed=0)
        return abs(ens.states[0, -1] - math.e)

    assert err(100) / err(200) >= 1.8     # O(dt)


def test_viscosity_zero_start_all_zero_under_law(viscosity_model):
    ens = simulate_closed_loop(viscosity_model, lambda t, x: 1.0, 0.0, 0.0,
                               TimeGrid(0.0, 1.0, 50), 100, seed=3)
    assert np.all(ens.states == 0.0)


def test_increment_statistics(classical_model):
    grid = TimeGrid(0.0, 1.0, 100)
    ens = simulate_paths(classical_model, 0.0, 1.0, OpenLoopControl.constant(0.0),
                         grid, 20000, seed=17)
    assert abs(ens.increments.mean()) < 3e-4
    assert abs(ens.increments.var() - grid.dt) < 3e-4


def test_moment_check_values(classical_model, viscosity_model):
    flat = simulate_paths(_flat_model(), 0.0, 0.0, OpenLoopControl.constant(0.0),
                          TimeGrid(0.0, 1.0, 10), 20, seed=0)
    assert moment_check(flat, 2).sup_moment == 0.0

    zero_start = simulate_paths(viscosity_model, 0.0, 0.0,
                                OpenLoopControl.constant(1.0),
                                TimeGrid(0.0, 1.0, 20), 50, seed=1)
    assert moment_check(zero_start, 2).sup_moment == 0.0

    r1 = moment_check(simulate_paths(classical_model, 0.0, 1.0,
                                     OpenLoopControl.constant(0.0),
                                     TimeGrid(0.0, 1.0, 100), 10000, seed=4), 2)
    r2 = moment_check(simulate_paths(classical_model, 0.0, 1.0,
                                     OpenLoopControl.constant(0.0),
                                     TimeGrid(0.0, 1.0, 100), 20000, seed=4), 2)
    assert math.isfinite(r1.growth_ratio)
    assert abs(r1.growth_ratio - r2.growth_ratio) / r2.growth_ratio < 0.10


def test_moment_check_rejects_odd_order(classical_model):
    ens = simulate_paths(classical_model, 0.0, 1.0, OpenLoopControl.constant(0.0),
                         TimeGrid(0.0, 1.0, 10), 10, seed=0)
    with pytest.raises(Exception):
        moment_check(ens, 3)


def test_control_outside_set_rejected(classical_model):
    with pytest.raises(SimulationError):
        simulate_paths(classical_model, 0.0, 1.0, OpenLoopControl.constant(2.0),
                       TimeGrid(0.0, 1.0, 10), 10, seed=0)


def test_control_table_shape_checked(classical_model):
    table = np.zeros((5, 9))
    with pytest.raises(Exception):
        simulate_paths(classical_model, 0.0, 1.0, OpenLoopControl.from_table(table),
                       TimeGrid(0.0, 1.0, 10), 5, seed=0)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nonfinite_state_aborts():
    blower = ControlModel(
        name="blow", drift=lambda r, x, u: np.asarray(x, dtype=float) ** 3 * 1e6,
        diffusion=lambda r, x, u: 0.0 * x,
        driver=lambda r, x, y, z, u: 0.0 * y, terminal=lambda x: x,
        obstacle=lambda r, x: np.full_like(np.asarray(x, dtype=float), 1e30),
        control_set=ControlSet.interval(0.0, 1.0, 2), horizon=1.0)
    with pytest.raises(SimulationError):
        simulate_paths(blower, 0.0, 10.0, OpenLoopControl.constant(0.0),
                       TimeGrid(0.0, 1.0, 200), 4, seed=0)


def test_csv_export_deterministic(tmp_path, classical_model):
    ens = simulate_paths(classical_model, 0.0, 1.0, OpenLoopControl.constant(0.0),
                         TimeGrid(0.0, 1.0, 5), 4, seed=8)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_ensemble_csv(ens, p1)
    write_ensemble_csv(ens, p2)
    assert p1.read_bytes() == p2.read_bytes()
    header = p1.read_text().splitlines()[0]
    assert "seed=8" in header and "steps=5" in header


def test_vector_state_simulation():
    # two uncoupled flat coordinates exercise the general-dimension path
    model = ControlModel(
        name="vec",
        drift=lambda r, x, u: np.zeros_like(x),
        diffusion=lambda r, x, u: np.zeros(x.shape + (2,)),
        driver=lambda r, x, y, z, u: 0.0 * y,
        terminal=lambda x: x[..., 0],
        obstacle=lambda r, x: np.ones(x.shape[:-1]),
        control_set=ControlSet.interval(0.0, 1.0, 2),
        horizon=1.0, state_dim=2, noise_dim=2)
    ens = simulate_paths(model, 0.0, np.array([1.0, -2.0]),
                         OpenLoopControl.constant(0.0),
                         TimeGrid(0.0, 1.0, 10), 8, seed=0)
    assert ens.states.shape == (8, 11, 2)
    assert np.all(ens.states[:, :, 0] == 1.0)
    assert np.all(ens.states[:, :, 1] == -2.0)


@settings(max_examples=12, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**31),
       steps=st.integers(min_value=1, max_value=30),
       paths=st.integers(min_value=1, max_value=40))
def test_seed_determinism_property(seed, steps, paths):
    model = example_classical()
    kw = dict(start_time=0.0, start_state=1.0,
              control=OpenLoopControl.constant(0.0),
              grid=TimeGrid(0.0, 1.0, steps), n_paths=paths, seed=seed)
    a = simulate_paths(model, **kw)
    b = simulate_paths(model, **kw)
    assert np.array_equal(a.states, b.states)
