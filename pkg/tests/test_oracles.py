import math

import numpy as np
import pytest
from scipy.integrate import quad

from qbsde import bsde as bs
from qbsde import oracles
from qbsde.model import TimeGrid, spec_from_dict


@pytest.mark.parametrize("horizon,x0,q,s,sigma", [(1.0, 1.0, 1.0, 1.0, 1.0), (0.5, -2.0, 0.3, 2.0, 0.7), (2.0, 0.0, 4.0, 0.1, 1.5)])
def test_riccati_ode_matches_closed_form(horizon, x0, q, s, sigma):
    v, _, _ = oracles.riccati_lq(horizon, x0, q, s, sigma)
    assert v == pytest.approx(oracles.riccati_lq_closed_form(horizon, x0, q, s, sigma), rel=1e-10)


def test_ou_isometry_against_quadrature():
    for s in (0.1, 0.5, 1.0, 3.0):
        integral = quad(lambda r: math.exp(-2 * r), 0, s)[0]
        assert float(oracles.ito_isometry_ou(np.array([s]))[0]) == pytest.approx(integral / s**2, rel=1e-12)


def test_discrete_isometry_converges():
    exact = float(oracles.ito_isometry_ou(np.array([1.0]))[0])
    gaps = [abs(oracles.ito_isometry_discrete(1 - 1 / n, 1 / n, n) - exact) for n in (16, 64, 256)]
    assert gaps[0] > 3 * gaps[1] > 9 * gaps[2]


def test_cole_hopf_value_of_a_constant():
    assert oracles.cole_hopf_value(np.full(10, 0.4), 1.0) == pytest.approx(0.4, abs=1e-15)


def test_cole_hopf_fd_gradient_linear_terminal():
    spec = spec_from_dict({"dim": 1, "horizon": 1.0, "drift": {"kind": "linear", "params": {"matrix": [[-1.0]]}}})
    grid = TimeGrid(0.0, 1.0, 32)
    phi = bs.make_terminal("linear-clipped", {"clip": 1e6}, 1)
    est, se = oracles.cole_hopf_fd_gradient(spec, grid, [0.3], [1.0], phi, 1.0, 2000, 3, True)
    # the log-moment generating function is affine in x with slope (1 - dt)^N
    assert est == pytest.approx((1 - 1 / 32) ** 32, abs=1e-6)
    assert se < 1e-6


def test_heat_mode_energy():
    assert oracles.heat_mode_energy(2.0, 3, 0.01) == pytest.approx(2.0 * math.exp(-0.18 * math.pi**2), rel=1e-15)
