import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qbsde import bsde as bs
from qbsde import control as ct
from qbsde import smoothing as sm
from qbsde.forward import simulate, variational
from qbsde.harness.config import config_hash, parse_config
from qbsde.model import TimeGrid, spec_from_dict

SETTINGS = settings(max_examples=40, deadline=None)
finite = st.floats(-5, 5, allow_nan=False)
TANH = spec_from_dict({"dim": 2, "horizon": 1.0, "drift": {"kind": "tanh-saturated", "params": {"matrix": [[1.0, 0.4], [-0.2, 0.8]]}}})


@SETTINGS
@given(a=finite, b=finite, seed=st.integers(0, 2**32))
def test_flow_is_linear_in_direction(a, b, seed):
    bundle = simulate(TANH, TimeGrid(0.0, 1.0, 8), [0.1, -0.3], 8, seed)
    e1 = variational(TANH, bundle, [1.0, 0.0]).flows
    e2 = variational(TANH, bundle, [0.0, 1.0]).flows
    mix = variational(TANH, bundle, [a, b]).flows
    np.testing.assert_allclose(mix, a * e1 + b * e2, atol=1e-12 * (1 + abs(a) + abs(b)))


@SETTINGS
@given(values=arrays(float, st.integers(3, 40), elements=finite), n=st.floats(0.1, 200))
def test_inf_sup_bounds_and_slope(values, n):
    phi = sm.GriddedFunction((np.linspace(-1, 1, values.size),), values)
    out = sm.inf_sup_terminal(phi, n)
    assert out.values.min() >= values.min() - 1e-12
    assert out.values.max() <= values.max() + 1e-12
    assert out.lipschitz <= phi.slopes()[0] * (1 + 1e-9) + 1e-9


@SETTINGS
@given(values=arrays(float, (7, 5), elements=finite), n=st.floats(0.1, 50))
def test_envelope_equals_scan(values, n):
    phi = sm.GriddedFunction((np.linspace(0, 1, 7), np.linspace(-2, 0, 5)), values)
    np.testing.assert_allclose(sm.inf_sup_values(phi, n), sm.inf_sup_values(phi, n, "scan"), atol=1e-10)


@SETTINGS
@given(c=finite, n=st.floats(0.1, 500))
def test_constants_fixed(c, n):
    phi = sm.GriddedFunction((np.linspace(-1, 1, 9),), np.full(9, c))
    np.testing.assert_array_equal(sm.inf_sup_values(phi, n), phi.values)


ADMISSIBLE = st.sampled_from(
    [ct.AdmissibleSet(), ct.AdmissibleSet("box", [-1.0], [0.5]), ct.AdmissibleSet("finite", points=[[-1.0], [0.3], [2.0]])]
)
ACTIONS = st.sampled_from([ct.ActionMap("linear", [[1.5]]), ct.ActionMap("saturating", [[2.0]])])


@SETTINGS
@given(adm=ADMISSIBLE, action=ACTIONS, z1=finite, z2=finite, w=st.floats(0, 1))
def test_hamiltonian_concave_in_z(adm, action, z1, z2, w):
    prob = ct.ControlProblem(ct.RunningCost(0.7, 0.3), action, adm, bs.make_terminal("constant", {"value": 0.0}, 1))
    z = np.array([[z1], [z2], [w * z1 + (1 - w) * z2]])
    vals, u, radius = ct.hamiltonian_batch(prob, 0.0, np.zeros((3, 1)), z)
    assert vals[2] >= w * vals[0] + (1 - w) * vals[1] - 1e-9
    assert np.all(np.abs(u[:, 0]) <= radius + 1e-12)
    assert adm.contains(u).all()


@SETTINGS
@given(adm=ADMISSIBLE, action=ACTIONS, lam=st.floats(0.1, 10), z=finite, x=finite)
def test_hamiltonian_scales_with_problem(adm, action, lam, z, x):
    prob = ct.ControlProblem(ct.RunningCost(0.7, 0.3), action, adm, bs.make_terminal("constant", {"value": 0.0}, 1))
    base = ct.hamiltonian(prob, 0.0, [[x]], [[z]]).value
    scaled = ct.hamiltonian(prob.scaled(lam), 0.0, [[x]], [[z]]).value
    assert abs(scaled - lam * base) <= 1e-7 * (1 + abs(lam * base))


@SETTINGS
@given(seed=st.integers(0, 2**63), threads=st.integers(1, 4), antithetic=st.booleans())
def test_simulation_is_reproducible(seed, threads, antithetic):
    grid = TimeGrid(0.0, 1.0, 4)
    a = simulate(TANH, grid, [0.0, 0.0], 6, seed, antithetic)
    b = simulate(TANH, grid, [0.0, 0.0], 6, seed, antithetic, threads=threads)
    np.testing.assert_array_equal(a.states, b.states)


@settings(max_examples=15, deadline=None)
@given(kappa=st.floats(0.5, 60), shift=st.floats(-1, 1), x0=st.floats(-1, 1), seed=st.integers(0, 1000))
def test_y_never_leaves_its_bound(kappa, shift, x0, seed):
    spec = spec_from_dict({"dim": 1, "horizon": 1.0})
    grid = TimeGrid(0.0, 1.0, 8)
    phi = bs.make_terminal("steep-sigmoid", {"kappa": kappa}, 1).shifted(shift)
    bundle = simulate(spec, grid, [x0], 500, seed, antithetic=True)
    sol = bs.solve(spec, grid, bundle, bs.make_driver("pure-quadratic", {"gamma": 1.0}), phi)
    assert np.max(np.abs(sol.y)) <= sol.bound_y


@SETTINGS
@given(slope=st.floats(-2, 2), scale=st.floats(0.01, 100))
def test_loglog_fit_recovers_power_law(slope, scale):
    x = np.array([1.0, 0.5, 0.25, 0.125, 0.0625])
    fit = bs.loglog_fit(x, scale * x**slope)
    assert abs(fit.slope - slope) < 1e-9


@SETTINGS
@given(paths=st.integers(1, 1000).map(lambda k: 2 * k), seed=st.integers(0, 2**31), steps=st.integers(1, 500))
def test_config_hash_is_order_free(paths, seed, steps):
    one = parse_config(f"schema_version = 1\n[mc]\npaths = {paths}\nseed = {seed}\n[grid]\nsteps = {steps}\n")
    two = parse_config(f"schema_version = 1\n[grid]\nsteps = {steps}\n[mc]\nseed = {seed}\npaths = {paths}\n")
    assert config_hash(one) == config_hash(two)
