import math

import numpy as np
import pytest

from rfbsde import ConfigError, ControlSet, ProbeGrid, validate_assumptions
from rfbsde.model import (ControlModel, build_model, example_classical,
                          example_viscosity, random_lipschitz_model, zero_model)


def test_control_set_validation():
    cs = ControlSet.interval(0.0, 1.0, 5)
    assert cs.dim == 1
    np.testing.assert_allclose(cs.points(), [0.0, 0.25, 0.5, 0.75, 1.0])
    assert cs.contains([0.0, 1.0])
    assert not cs.contains(1.5)
    np.testing.assert_allclose(cs.clip([-1.0, 2.0]), [0.0, 1.0])
    with pytest.raises(ConfigError):
        ControlSet.interval(1.0, 0.0)
    with pytest.raises(ConfigError):
        ControlSet.interval(0.0, 1.0, points=1)


def test_control_set_product_grid():
    cs = ControlSet(bounds=((0.0, 1.0), (2.0, 3.0)), grid_points=(2, 3))
    pts = cs.points()
    assert pts.shape == (6, 2)
    assert pts[0].tolist() == [0.0, 2.0]       # lexicographic order
    assert cs.contains(pts)


def test_classical_example_coefficients(classical_model):
    m = classical_model
    assert m.drift(0.0, 2.0, 0.5) == 2.5
    assert m.driver(0.0, 0.0, 3.0, 0.0, 1.0) == 4.0
    assert m.obstacle(0.3, 2.0) == pytest.approx(2.0 * math.exp(2.0))
    assert m.terminal(3.0) == 3.0
    assert m.diffusion(0.0, 4.0, 0.7) == 4.0


def test_viscosity_example_coefficients(viscosity_model):
    m = viscosity_model
    assert m.drift(0.0, 3.0, 2.0) == 6.0
    assert m.diffusion(0.0, 3.0, 1.5) == 3.0
    assert m.driver(0.0, 0.0, -2.0, 0.0, 1.0) == -2.0
    assert m.obstacle(0.5, -1.0) == 0.0
    assert m.obstacle(0.5, 1.0) == 1.0
    assert m.value_kinks == (0.0,)


@pytest.mark.parametrize("name", ["example-classical", "example-viscosity", "zero"])
def test_catalog_builds(name):
    model = build_model(name, horizon=0.5)
    assert model.horizon == 0.5
    assert model.name == name


def test_catalog_unknown_name():
    with pytest.raises(ConfigError):
        build_model("no-such-model")


def test_half_covariance_nonnegative(classical_model, viscosity_model):
    xs = np.linspace(-5.0, 5.0, 21)
    for m in (classical_model, viscosity_model):
        for u in m.control_set.points():
            a = m.half_covariance(0.3, xs, u)
            assert np.all(a >= 0.0)


def test_examples_finite_on_finite_inputs(classical_model, viscosity_model):
    xs = np.linspace(-50.0, 50.0, 11)
    for m in (classical_model, viscosity_model):
        u = float(m.control_set.points()[0])
        assert np.all(np.isfinite(m.drift(0.1, xs, u)))
        assert np.all(np.isfinite(m.diffusion(0.1, xs, u)))
        assert np.all(np.isfinite(m.driver(0.1, xs, xs, xs, u)))
        assert np.all(np.isfinite(m.terminal(xs)))
        assert np.all(np.isfinite(m.obstacle(0.1, xs)))


def test_assumptions_classical_flags_terminal_violation(classical_model):
    probe = ProbeGrid(time_bounds=(0.0, 1.0), state_bounds=(-5.0, 5.0), points=9)
    report = validate_assumptions(classical_model, probe, seed=3)
    assert report.entry("H1").status == "pass"
    assert report.entry("H2", "data_lipschitz_driver_terminal_obstacle").status == "pass"
    assert report.entry("H3").status == "pass"
    bad = report.entry("H2", "terminal_below_obstacle")
    assert bad.status == "fail"
    assert bad.worst_point[1] < 0.0          # violating sample sits at x < 0
    # gap at x: x - x e^{2T} maximal at the most negative probed state
    assert bad.constant == pytest.approx(-5.0 - (-5.0) * math.exp(2.0))
    assert not report.passed


def test_assumptions_classical_pass_on_positive_box(classical_model):
    probe = ProbeGrid(time_bounds=(0.0, 1.0), state_bounds=(0.1, 5.0), points=9)
    report = validate_assumptions(classical_model, probe, seed=3)
    assert report.passed


def test_assumptions_zero_coefficients():
    model = ControlModel(
        name="flat", drift=lambda r, x, u: 0.0 * x, diffusion=lambda r, x, u: 0.0 * x,
        driver=lambda r, x, y, z, u: 0.0 * y, terminal=lambda x: 0.0 * x,
        obstacle=lambda r, x: np.ones_like(np.asarray(x, dtype=float)),
        control_set=ControlSet.interval(0.0, 1.0, 3), horizon=1.0)
    report = validate_assumptions(
        model, ProbeGrid((0.0, 1.0), (-5.0, 5.0), points=7), seed=0)
    assert report.passed
    assert report.entry("H1").constant == 0.0
    assert report.entry("H3").constant == 0.0


def test_assumptions_viscosity_driver_constant(viscosity_model):
    probe = ProbeGrid(time_bounds=(0.0, 1.0), state_bounds=(-5.0, 5.0), points=9)
    report = validate_assumptions(viscosity_model, probe, seed=5)
    assert report.entry("H1").status == "pass"
    assert report.entry("H3").status == "pass"
    # driver is y -> -|y|: difference quotients measure a constant of 1
    lip = report.entry("H2", "data_lipschitz_driver_terminal_obstacle").constant
    assert 0.9 <= lip <= 1.05


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_assumptions_nonfinite_coefficient_fails():
    model = ControlModel(
        name="singular", drift=lambda r, x, u: 1.0 / np.asarray(x, dtype=float),
        diffusion=lambda r, x, u: 0.0 * x,
        driver=lambda r, x, y, z, u: 0.0 * y, terminal=lambda x: 0.0 * x,
        obstacle=lambda r, x: np.ones_like(np.asarray(x, dtype=float)),
        control_set=ControlSet.interval(0.0, 1.0, 3), horizon=1.0)
    report = validate_assumptions(
        model, ProbeGrid((0.0, 1.0), (-1.0, 1.0), points=9), seed=0)
    assert report.entry("H1").status == "fail"
    assert math.isinf(report.entry("H1").constant)


def test_declared_flags_reported_unchecked(classical_model):
    report = validate_assumptions(
        classical_model, ProbeGrid((0.0, 1.0), (0.1, 5.0), points=5), seed=0)
    for flag in ("A1", "A2", "A3", "A4"):
        assert report.entry(flag).status == "unchecked"


@pytest.mark.parametrize("seed", range(10))
def test_random_models_satisfy_terminal_condition(seed):
    model = random_lipschitz_model(seed)
    probe = ProbeGrid((0.0, 1.0), (-4.0, 4.0), points=9)
    report = validate_assumptions(model, probe, seed=seed)
    assert report.entry("H2", "terminal_below_obstacle").status == "pass"
    assert report.entry("H1").constant < 10.0


def test_zero_model_cost_data():
    m = zero_model()
    assert m.driver(0.0, 1.0, 2.0, 3.0, 0.5) == 0.0
    assert m.obstacle(0.2, 0.7) == 1.0
