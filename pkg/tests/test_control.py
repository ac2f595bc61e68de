import math

import numpy as np
import pytest

from qbsde import bsde as bs
from qbsde import control as ct
from qbsde import oracles
from qbsde.forward import simulate
from qbsde.model import TimeGrid, spec_from_dict

BM = spec_from_dict({"dim": 1, "horizon": 1.0})
ZERO = bs.make_terminal("constant", {"value": 0.0}, 1)
LIN = ct.ActionMap("linear", [[1.0]])


def _problem(adm=None, cost=None, action=LIN, terminal=ZERO):
    return ct.ControlProblem(cost or ct.RunningCost(1.0), action, adm or ct.AdmissibleSet(), terminal)


def test_lq_closed_form():
    z = np.linspace(-6, 6, 241)[:, None]
    vals, u, _ = ct.hamiltonian_batch(_problem(), 0.0, np.zeros_like(z), z)
    np.testing.assert_allclose(vals, -z[:, 0] ** 2 / 4, atol=1e-14)
    np.testing.assert_allclose(u[:, 0], -z[:, 0] / 2, atol=1e-14)


def test_singleton_set():
    prob = _problem(ct.AdmissibleSet("finite", points=[[0.0]]), ct.RunningCost(1.0, 0.5))
    x = np.array([[1.3]])
    res = ct.hamiltonian(prob, 0.0, x, [[2.5]])
    assert res.value == pytest.approx(float(prob.cost(0.0, x, np.zeros((1, 1)))[0]))
    np.testing.assert_array_equal(res.minimizer, [0.0])


def test_box_constraint_against_dense_scan():
    prob = _problem(ct.AdmissibleSet("box", [-1.0], [1.0]))
    res = ct.hamiltonian(prob, 0.0, [[0.0]], [[3.0]])
    grid = np.linspace(-1, 1, 100_001)
    scan = np.min(grid**2 + 3 * grid)
    assert res.value == pytest.approx(-2.0, abs=1e-14)
    assert res.value == pytest.approx(scan, abs=1e-9)
    np.testing.assert_array_equal(res.minimizer, [-1.0])


def test_saturating_action_against_dense_scan():
    prob = _problem(action=ct.ActionMap("saturating", [[2.0]]), cost=ct.RunningCost(0.5))
    z = np.array([[-3.0], [0.4], [5.0]])
    vals, _, _ = ct.hamiltonian_batch(prob, 0.0, np.zeros_like(z), z)
    u = np.linspace(-20, 20, 400_001)
    for row, zz in zip(vals, z[:, 0]):
        assert row == pytest.approx(np.min(0.5 * u**2 + zz * 2 * np.tanh(u)), abs=1e-8)


def test_finite_set_picks_smallest_tie():
    prob = _problem(ct.AdmissibleSet("finite", points=[[1.0], [-1.0]]))
    res = ct.hamiltonian(prob, 0.0, [[0.0]], [[0.0]])
    np.testing.assert_array_equal(res.minimizer, [-1.0])


def test_lq_local_lipschitz_explicit():
    prob = _problem()
    rng = np.random.default_rng(0)
    z1, z2 = rng.normal(0, 3, (2000, 1)), rng.normal(0, 3, (2000, 1))
    p1 = ct.hamiltonian_batch(prob, 0.0, np.zeros_like(z1), z1)[0]
    p2 = ct.hamiltonian_batch(prob, 0.0, np.zeros_like(z2), z2)[0]
    a, b = np.abs(z1[:, 0]), np.abs(z2[:, 0])
    gap = np.abs(p1 - p2)
    assert np.all(gap <= (a + b) / 4 * np.abs(z1 - z2)[:, 0] + 1e-12)
    assert np.all((a + b) / 4 <= prob.L_psi * (1 + a + b))


@pytest.mark.parametrize(
    "adm",
    [
        ct.AdmissibleSet(),
        ct.AdmissibleSet("box", [-1.0], [0.5]),
        ct.AdmissibleSet("finite", points=[[-1.0], [0.0], [2.0]]),
    ],
)
def test_regularity_sampled(adm):
    rep = ct.hamiltonian_regularity_check(_problem(adm, ct.RunningCost(1.0, 0.5)), 10_000, seed=1)
    assert rep["passed"]
    assert rep["concavity_violations"] == 0 and math.isfinite(rep["z_constant"])


def test_zero_cost_problem():
    grid = TimeGrid(0.0, 1.0, 16)
    prob = _problem()
    bundle = simulate(BM, grid, [0.3], 2000, 3, antithetic=True)
    sol = bs.solve(BM, grid, bundle, ct.hamiltonian_driver(prob), ZERO, basis_degree=2)
    run = ct.closed_loop(prob, BM, grid, [0.3], sol, 2000, 4, antithetic=True)
    assert sol.y0 == 0.0
    assert run.cost.mean == 0.0 and run.max_abs_control < 0.05


def test_lq_feedback_matches_riccati():
    grid = TimeGrid(0.0, 1.0, 100)
    # terminal x^2 capped far beyond where the controlled state goes
    phi = bs.make_terminal("quadratic-clipped", {"cap": 4.3**2}, 1)
    prob = _problem(terminal=phi)
    bundle = simulate(BM, grid, [1.0], 20_000, 51, antithetic=True)
    sol = bs.solve(BM, grid, bundle, ct.hamiltonian_driver(prob), phi, basis_degree=2)
    run = ct.closed_loop(prob, BM, grid, [1.0], sol, 20_000, 52, antithetic=True)
    riccati = oracles.riccati_lq(1.0, 1.0)[0]
    assert riccati == pytest.approx(0.5 + math.log(2.0), abs=1e-10)
    assert abs(run.cost.mean - riccati) < 3 * (run.cost.se + 1e-3)
    dominance = [ct.constant_control_cost(prob, BM, grid, [1.0], [u], 4000, 60 + k, True) for k, u in enumerate((-1.0, -0.5, 0.0, 0.7))]
    rep = ct.fundamental_relation_check(sol.y0, float(sol.value_se(0, [[1.0]])[0]), run.cost, list(zip((-1.0, -0.5, 0.0, 0.7), dominance)))
    assert rep["violations"] == []


def test_closed_loop_stays_admissible():
    grid = TimeGrid(0.0, 1.0, 16)
    phi = bs.make_terminal("linear-clipped", {"clip": 2.0}, 1)
    prob = _problem(ct.AdmissibleSet("box", [-0.5], [0.5]), terminal=phi)
    bundle = simulate(BM, grid, [0.0], 2000, 5, antithetic=True)
    sol = bs.solve(BM, grid, bundle, ct.hamiltonian_driver(prob), phi)
    run = ct.closed_loop(prob, BM, grid, [0.0], sol, 2000, 6, antithetic=True, keep_paths=True)
    assert np.all(np.abs(run.controls) <= 0.5)


def test_c_gamma_ball_contains_minimisers():
    prob = _problem(ct.AdmissibleSet("box", [-3.0], [3.0]), ct.RunningCost(0.5, 0.2))
    z = np.linspace(-10, 10, 101)[:, None]
    _, u, radius = ct.hamiltonian_batch(prob, 0.0, np.zeros_like(z), z)
    assert np.all(np.abs(u[:, 0]) <= radius)


@pytest.mark.parametrize(
    "make",
    [
        lambda: ct.RunningCost(0.0),
        lambda: ct.RunningCost(1.0, -0.1),
        lambda: ct.AdmissibleSet("box", [1.0], [0.0]),
        lambda: ct.AdmissibleSet("ellipse"),
        lambda: ct.AdmissibleSet("finite", points=np.zeros((0, 1))),
    ],
)
def test_invalid_problem_parts(make):
    with pytest.raises(ct.ControlError):
        make()


def test_inadmissible_constant_control():
    prob = _problem(ct.AdmissibleSet("box", [-1.0], [1.0]))
    with pytest.raises(ct.ControlError):
        ct.constant_control_cost(prob, BM, TimeGrid(0.0, 1.0, 4), [0.0], [2.0], 10, 0)
