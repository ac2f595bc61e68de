import dataclasses
import math

import numpy as np
import pytest

from qbsde import bsde as bs
from qbsde import oracles
from qbsde.forward import simulate
from qbsde.model import ModelError, TimeGrid, spec_from_dict

SIGMA = 0.7
BM = spec_from_dict({"dim": 1, "horizon": 1.0, "diffusion": {"kind": "constant", "params": {"sigma": SIGMA}}})
OU = spec_from_dict({"dim": 1, "horizon": 1.0, "drift": {"kind": "linear", "params": {"matrix": [[-1.0]]}}})
IDENTITY = bs.make_terminal("linear-clipped", {"clip": 1e6}, 1)
SIGMOID = bs.make_terminal("steep-sigmoid", {"kappa": 4.0}, 1)


@pytest.fixture(scope="module")
def linear_solution():
    grid = TimeGrid(0.0, 1.0, 16)
    bundle = simulate(BM, grid, [0.3], 20_000, 22)
    return bs.solve(BM, grid, bundle, bs.make_driver("zero"), IDENTITY, basis_degree=1)


def test_martingale_representation_value(linear_solution):
    se = float(linear_solution.value_se(0, np.array([[0.3]]))[0])
    assert abs(linear_solution.y0 - 0.3) < 3 * se


def test_martingale_representation_z(linear_solution):
    sol = linear_solution
    m, dt = sol.y.shape[0], sol.grid.dt
    for i in range(sol.grid.steps):
        # residual variance sigma^2 (T - t_i) times |dW|^2 / dt^2
        se = SIGMA * math.sqrt((1.0 - sol.grid.node(i)) / (dt * m))
        assert abs(sol.z[:, i, 0].mean() - SIGMA) < 3 * se


@pytest.mark.parametrize("p", [1.0, 2.0, 4.0])
def test_mp_norm_of_constant_z(linear_solution, p):
    assert bs.mp_norm(linear_solution, p) == pytest.approx(SIGMA, abs=0.01)


def test_mp_norm_of_zero_z():
    grid = TimeGrid(0.0, 1.0, 8)
    bundle = simulate(BM, grid, [0.0], 1000, 1)
    sol = bs.solve(BM, grid, bundle, bs.make_driver("zero"), IDENTITY)
    zero = dataclasses.replace(sol, z=np.zeros_like(sol.z))
    assert bs.mp_norm(zero, 2.0) == 0.0 and bs.mp_norm(zero, 4.0) == 0.0


def test_constant_driver_shifts_value():
    grid = TimeGrid(0.0, 1.0, 16)
    bundle = simulate(OU, grid, [0.2], 20_000, 23, antithetic=True)
    # centred so that neither run touches its Y bound
    phi = SIGMOID.shifted(-0.5)
    base = bs.solve(OU, grid, bundle, bs.make_driver("zero"), phi)
    shifted = bs.solve(OU, grid, bundle, bs.make_driver("constant", {"value": 0.3}), phi)
    mean, se = bundle.mean_and_se(phi(bundle.terminal))
    assert abs(shifted.y0 - (mean + 0.3)) < 3 * se
    assert shifted.y0 - base.y0 == pytest.approx(0.3, abs=1e-10)


def test_quadratic_driver_matches_cole_hopf():
    grid = TimeGrid(0.0, 1.0, 32)
    bundle = simulate(OU, grid, [0.2], 50_000, 21, antithetic=True)
    sol = bs.solve(OU, grid, bundle, bs.make_driver("pure-quadratic", {"gamma": 1.0}), SIGMOID, basis_degree=5)
    vals = SIGMOID(bundle.terminal)
    oracle = oracles.cole_hopf_value(vals, 1.0)
    mean, se = bundle.mean_and_se(np.exp(vals))
    # delta method for the log, plus an O(dt) discretisation allowance
    assert abs(sol.y0 - oracle) < 3 * (se / mean + 0.05 * grid.dt)


def test_quadratic_m4_norm_stable_in_sample_size():
    grid = TimeGrid(0.0, 1.0, 16)
    driver = bs.make_driver("pure-quadratic", {"gamma": 1.0})
    for m in (1_000, 10_000, 100_000):
        bundle = simulate(OU, grid, [0.2], m, 24, antithetic=True)
        sol = bs.solve(OU, grid, bundle, driver, SIGMOID)
        m2, m4 = bs.mp_norm(sol, 2.0), bs.mp_norm(sol, 4.0)
        assert math.isfinite(m4) and m4 < 2 * m2


def test_y_within_a_priori_bound():
    grid = TimeGrid(0.0, 1.0, 16)
    bundle = simulate(OU, grid, [0.0], 5000, 25, antithetic=True)
    driver = bs.make_driver("custom-smooth", {"a": 0.2, "b": 0.3, "gamma": 1.0})
    sol = bs.solve(OU, grid, bundle, driver, SIGMOID)
    assert sol.bound_y == pytest.approx(math.exp(0.5) * (1.0 + 0.2))
    assert np.max(np.abs(sol.y)) <= sol.bound_y
    assert sol.diagnostics["y_clip_rate"] < 0.01


def test_lipschitz_linear_growth_constant():
    drv = bs.make_driver("lipschitz-linear", {"c0": 0.1, "ky": 0.5, "kz": 0.5, "kx": [0.2, -0.3]})
    assert drv.K_psi == pytest.approx(0.6)
    x = np.array([[50.0, -50.0]])
    val = drv(0.0, x, np.zeros(1), np.zeros((1, 2)))
    assert abs(val[0]) <= drv.K_psi


def test_power_law_fit_is_exact():
    h = np.array([0.5, 0.25, 0.125, 0.0625, 0.03125])
    fit = bs.z_singularity_fit(h, 0.8 * h**-0.5)
    assert fit.slope == pytest.approx(-0.5, abs=1e-12)
    assert fit.constant == pytest.approx(0.8, rel=1e-12)


def test_singularity_fit_needs_five_horizons():
    with pytest.raises(ValueError):
        bs.z_singularity_fit([1.0, 0.5], [1.0, 2.0])


def test_exact_terminal_approximations_give_zero_deltas():
    grid = TimeGrid(0.0, 1.0, 8)
    bundle = simulate(OU, grid, [0.0], 4000, 26, antithetic=True)
    rep = bs.stability_under_terminal_approx(
        OU, grid, bundle, bs.make_driver("zero"), SIGMOID, [(n, SIGMOID, 0.0) for n in (2.0, 8.0)]
    )
    assert rep.dy == [0.0, 0.0] and rep.dz == [0.0, 0.0]


def test_zero_length_grid_returns_terminal():
    grid = TimeGrid(1.0, 1.0, 4)
    bundle = simulate(OU, grid, [0.4], 10, 0)
    sol = bs.solve(OU, grid, bundle, bs.make_driver("zero"), SIGMOID)
    assert sol.y0 == pytest.approx(float(SIGMOID(np.array([[0.4]]))[0]))
    np.testing.assert_array_equal(sol.z0, [0.0])


def test_mismatched_grid_rejected():
    bundle = simulate(OU, TimeGrid(0.0, 1.0, 8), [0.0], 10, 0)
    with pytest.raises(ModelError):
        bs.solve(OU, TimeGrid(0.0, 1.0, 4), bundle, bs.make_driver("zero"), SIGMOID)


@pytest.mark.parametrize("kind", ["nope", "exponential"])
def test_unknown_catalog_entries(kind):
    with pytest.raises(ModelError):
        bs.make_terminal(kind, {}, 1)
    with pytest.raises(ModelError):
        bs.make_driver(kind)
