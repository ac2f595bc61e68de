"""Quick closed-form assertions (the ``trivial`` suite)."""

from __future__ import annotations

import math
from typing import Any, Callable

import numpy as np

from .. import bismut as bm
from .. import bsde as bs
from .. import control as ct
from .. import heat as ht
from .. import smoothing as sm
from ..forward import simulate, variational
from ..model import TimeGrid, spec_from_dict

Check = Callable[[], tuple[bool, dict[str, Any]]]


def _bm(horizon=1.0):
    return spec_from_dict({"dim": 1, "horizon": horizon})


def brownian_moments():
    b = simulate(_bm(), TimeGrid(0, 1, 32), [0.5], 20_000, 1)
    m, v = float(b.terminal.mean()), float(b.terminal.var())
    n = b.paths
    return abs(m - 0.5) <= 3 / math.sqrt(n) and abs(v - 1) <= 3 * math.sqrt(2 / n), {"mean": m, "var": v}


def zero_horizon():
    b = simulate(_bm(), TimeGrid(0.5, 0.5, 10), [0.3], 10, 1)
    return bool(b.dw.size == 0 and np.all(b.states == 0.3)), {"steps": b.steps}


def identity_flow():
    b = variational(_bm(), simulate(_bm(), TimeGrid(0, 1, 16), [0.0], 100, 1), [2.0])
    return bool(np.all(b.flows == 2.0)), {}


def constant_terminal_bsde():
    spec = _bm()
    grid = TimeGrid(0, 1, 16)
    b = simulate(spec, grid, [0.0], 2000, 1, True)
    sol = bs.solve(spec, grid, b, bs.make_driver("zero"), bs.make_terminal("constant", {"value": 0.7}, 1))
    return abs(sol.y0 - 0.7) <= 1e-12 and float(np.max(np.abs(sol.z))) <= 1e-12, {"y0": sol.y0}


def constant_driver_bsde():
    spec = _bm()
    grid = TimeGrid(0, 1, 16)
    b = simulate(spec, grid, [0.0], 2000, 1, True)
    sol = bs.solve(spec, grid, b, bs.make_driver("constant", {"value": 0.3}), bs.make_terminal("constant", {"value": 0.7}, 1))
    return abs(sol.y0 - 1.0) <= 1e-12, {"y0": sol.y0}


def zero_weight_direction():
    b = variational(_bm(), simulate(_bm(), TimeGrid(0, 1, 8), [0.0], 100, 1), [0.0])
    w = bm.compute_weights(b, _bm())
    return bool(np.all(w.values == 0.0)), {}


def smoothing_fixed_point():
    phi = sm.GriddedFunction.sample(lambda p: np.full(p.shape[0], 0.4), -1, 1, 101)
    ok = all(np.array_equal(sm.inf_sup_terminal(phi, n).values, phi.values) for n in (2, 8, 32, 128))
    psi = sm.GriddedFunction.sample(lambda p: 1 + p[:, 0] ** 2, -5, 5, 101)
    psi_n = sm.inf_sup_driver(psi, 8, [0])
    return ok and psi_n.sup_distance == 0.0, {}


def lq_hamiltonian():
    phi = bs.make_terminal("constant", {"value": 0.0}, 1)
    prob = ct.ControlProblem(ct.RunningCost(1.0), ct.ActionMap("linear", [[1.0]]), ct.AdmissibleSet(), phi)
    z = np.linspace(-5, 5, 101)[:, None]
    v, u, _ = ct.hamiltonian_batch(prob, 0.0, np.zeros_like(z), z)
    err = max(float(np.max(np.abs(v + z[:, 0] ** 2 / 4))), float(np.max(np.abs(u[:, 0] + z[:, 0] / 2))))
    return err <= 1e-12, {"error": err}


def singleton_hamiltonian():
    phi = bs.make_terminal("constant", {"value": 0.0}, 1)
    prob = ct.ControlProblem(ct.RunningCost(1.0, 0.5), ct.ActionMap("linear", [[1.0]]), ct.AdmissibleSet("finite", points=[[0.0]]), phi)
    x = np.array([[0.3]])
    r = ct.hamiltonian(prob, 0.0, x, [2.0])
    g0 = float(prob.cost(0.0, x, np.zeros((1, 1)))[0])
    return r.value == g0 and r.minimizer[0] == 0.0, {"value": r.value}


def dirichlet_spectrum():
    m = ht.build(ht.HeatModelParams(modes=2))
    lam = -m.spec.a_eigenvalues
    ok = abs(lam[0] - 9.8696044) < 1e-6 and abs(lam[1] - 39.4784176) < 1e-6
    return ok, {"lambda": lam.tolist()}


def unit_noise_heat():
    m = ht.build(ht.HeatModelParams(modes=3, sigma=1.0))
    return bool(np.all(m.spec.diffusion.sigma(0.0) == 1.0) and m.spec.g_inverse_bound == 1.0), {}


TRIVIAL: dict[str, Check] = {
    "brownian moments": brownian_moments,
    "zero horizon": zero_horizon,
    "identity flow": identity_flow,
    "constant terminal": constant_terminal_bsde,
    "constant driver": constant_driver_bsde,
    "zero direction weight": zero_weight_direction,
    "smoothing fixed points": smoothing_fixed_point,
    "LQ Hamiltonian": lq_hamiltonian,
    "singleton action set": singleton_hamiltonian,
    "Dirichlet spectrum": dirichlet_spectrum,
    "unit noise": unit_noise_heat,
}
