import math

import numpy as np
import pytest

from qbsde import bismut as bm
from qbsde import bsde as bs
from qbsde import oracles
from qbsde.forward import simulate, variational
from qbsde.model import ModelError, TimeGrid, spec_from_dict

SIGMA = 0.7
BM = spec_from_dict({"dim": 1, "horizon": 1.0, "diffusion": {"kind": "constant", "params": {"sigma": SIGMA}}})
OU = spec_from_dict({"dim": 1, "horizon": 1.0, "drift": {"kind": "linear", "params": {"matrix": [[-1.0]]}}})
IDENTITY = bs.make_terminal("linear-clipped", {"clip": 1e6}, 1)
SIGMOID = bs.make_terminal("steep-sigmoid", {"kappa": 4.0}, 1)


def _weights(spec, steps, x0, m, seed, antithetic=False, h=1.0):
    grid = TimeGrid(0.0, 1.0, steps)
    bundle = variational(spec, simulate(spec, grid, [x0], m, seed, antithetic), [h])
    return bundle, bm.compute_weights(bundle, spec)


def test_brownian_weight_second_moment():
    _, w = _weights(BM, 16, 0.0, 50_000, 31)
    for i in (1, 4, 16):
        u2 = w.at(i) ** 2
        se = u2.std(ddof=1) / math.sqrt(u2.size)
        assert abs(u2.mean() - 1.0 / (SIGMA**2 * w.elapsed[i - 1])) < 3 * se


def test_zero_direction_gives_zero_weight():
    _, w = _weights(OU, 8, 0.0, 100, 32, h=0.0)
    assert not np.any(w.values)


def test_ou_weight_matches_ito_isometry():
    steps = 256
    _, w = _weights(OU, steps, 0.0, 50_000, 33)
    u2 = w.at(steps) ** 2
    se = u2.std(ddof=1) / math.sqrt(u2.size)
    discrete = oracles.ito_isometry_discrete(1 - 1 / steps, 1 / steps, steps)
    assert abs(u2.mean() - discrete) < 3 * se
    # (1 - e^{-2}) / 2 in the limit
    assert discrete == pytest.approx(0.43233, abs=3e-3)


def test_weight_before_first_step_undefined():
    _, w = _weights(OU, 4, 0.0, 10, 34)
    with pytest.raises(ModelError):
        w.at(0)


def test_identity_gradient_is_one():
    bundle, w = _weights(BM, 32, 0.0, 50_000, 35)
    g = bm.linear_gradient(IDENTITY, bundle, w)
    assert abs(g.estimate - 1.0) < 3 * g.se


def test_constant_gradient_vanishes():
    bundle, w = _weights(OU, 16, 0.2, 20_000, 36)
    g = bm.linear_gradient(bs.make_terminal("constant", {"value": 2.0}, 1), bundle, w)
    assert abs(g.estimate) < 3 * g.se
    bundle, w = _weights(OU, 16, 0.2, 20_000, 36, antithetic=True)
    assert bm.linear_gradient(bs.make_terminal("constant", {"value": 2.0}, 1), bundle, w).estimate == pytest.approx(0.0, abs=1e-14)


def test_quadratic_terminal_gaussian_oracle():
    bundle, w = _weights(OU, 64, 0.3, 100_000, 37, antithetic=True)
    g = bm.linear_gradient(bs.make_terminal("quadratic-clipped", {"cap": 1e6}, 1), bundle, w)
    # 2 x e^{-2} in continuous time; the scheme contracts by (1 - dt) per step
    exact = 2 * 0.3 * (1 - 1 / 64) ** 128
    assert exact == pytest.approx(0.0812, abs=2e-3)
    assert abs(g.estimate - exact) < 3 * g.se


def test_zero_driver_reduces_exactly():
    bundle, w = _weights(OU, 16, 0.2, 5000, 38, antithetic=True)
    grid = bundle.grid
    sol = bs.solve(OU, grid, bundle, bs.make_driver("zero"), SIGMOID)
    lin = bm.linear_gradient(SIGMOID, bundle, w)
    nl = bm.nonlinear_gradient(bs.make_driver("zero"), SIGMOID, sol, bundle, w)
    assert (nl.estimate, nl.se) == (lin.estimate, lin.se)


def test_constant_driver_adds_nothing():
    bundle, w = _weights(OU, 16, 0.2, 20_000, 39)
    drv = bs.make_driver("constant", {"value": 0.4})
    sol = bs.solve(OU, bundle.grid, bundle, drv, SIGMOID)
    lin = bm.linear_gradient(SIGMOID, bundle, w)
    nl = bm.nonlinear_gradient(drv, SIGMOID, sol, bundle, w)
    assert abs(nl.estimate - lin.estimate) < 3 * math.hypot(nl.se, lin.se)


def test_later_start_node():
    bundle, w = _weights(OU, 16, 0.2, 2000, 40)
    sol = bs.solve(OU, bundle.grid, bundle, bs.make_driver("zero"), SIGMOID)
    with pytest.raises(ModelError):
        bm.nonlinear_gradient(bs.make_driver("zero"), SIGMOID, sol, bundle, w, s=16)


@pytest.mark.parametrize("q,tol", [(2.0, 0.05), (4.0, 0.1)])
def test_brownian_moment_scaling(q, tol):
    _, w = _weights(BM, 64, 0.0, 50_000, 41)
    assert abs(bm.u_moment_report(w, q).fit.slope + 0.5) <= tol


def test_sup_constant_consistent_across_horizons():
    consts = []
    for horizon in (1.0, 0.5, 0.25):
        grid = TimeGrid(0.0, horizon, 32)
        bundle = variational(BM, simulate(BM, grid, [0.0], 20_000, 42), [1.0])
        consts.append(bm.u_moment_report(bm.compute_weights(bundle, BM), 2.0).sup_constant)
    assert max(consts) <= 2 * min(consts)


def test_gradient_bound_check_cases():
    h = [1.0, 0.5, 0.25, 0.125]
    assert bm.gradient_bound_check(h, [0.0, 1e-5, -2e-4, 0.0]).degenerate
    assert bm.gradient_bound_check(h, [0.3] * 4).fit.slope == pytest.approx(0.0, abs=1e-12)
    assert not bm.gradient_bound_check(h, [x**-1.0 for x in h]).passed
