"""Controlled semilinear heat equation on (0, 1) with Dirichlet boundary.

    dX = (X_xixi + f(X) + b u) dt + sigma(t) dW

is truncated to the first ``modes`` sine modes ``e_k = sqrt(2) sin(k pi xi)``.
Densities are integrated with composite Simpson quadrature; on the sine
modes that rule is exact (up to rounding), so quadrature and mode-space
inner products agree.  The noise intensity may depend on time but not on
``xi``, which keeps ``G`` diagonal with an exact inverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.special import expit

from .bsde import TerminalSpec, solve
from .control import ActionMap, AdmissibleSet, ControlProblem, RunningCost, closed_loop, hamiltonian_driver
from .forward import simulate
from .model import (
    QUADRATURE_NODES,
    ConstantDiffusion,
    GalerkinSpec,
    HeatNemytskiiDrift,
    ModelError,
    ModulatedDiffusion,
    Reaction,
    TimeGrid,
    dirichlet_eigenvalues,
    simpson_weights,
    sine_basis,
)

_SAT_SLOPE = math.sqrt(2.0) * math.exp(-0.5)


@dataclass(frozen=True)
class HeatModelParams:
    modes: int = 8
    horizon: float = 0.2
    reaction: str = "tanh"
    reaction_amp: float = 0.5
    sigma: float = 0.5
    sigma_amp: float = 0.0
    sigma_freq: float = 1.0
    gain: float = 1.0
    control_weight: float = 1.0
    state_weight: float = 0.5
    state_scale: float = 1.0
    terminal_amplitude: float = 1.0
    terminal_kappa: float = 2.0
    terminal_center: float = 0.5
    initial: str = "sine"
    initial_amplitude: float = 1.0
    initial_mode: int = 1

    @classmethod
    def from_dict(cls, cfg: Mapping[str, Any]) -> "HeatModelParams":
        """Read the ``[heat]`` table (nested sub-tables are flattened)."""
        flat: dict[str, Any] = {}
        for key, val in cfg.items():
            if isinstance(val, Mapping):
                for sub, v in val.items():
                    name = key if sub in ("kind", "value") else f"{key}_{sub}"
                    flat[name] = v
            else:
                flat[key] = val
        known = cls.__dataclass_fields__
        unknown = sorted(set(flat) - set(known))
        if unknown:
            raise ModelError(f"unknown heat fields: {', '.join(unknown)}")
        return cls(**flat)

    def with_modes(self, modes: int) -> "HeatModelParams":
        return HeatModelParams(**{**self.__dict__, "modes": modes})


@dataclass(eq=False)
class HeatModel:
    params: HeatModelParams
    spec: GalerkinSpec
    problem: ControlProblem
    x0: np.ndarray
    xi: np.ndarray
    basis: np.ndarray
    weights: np.ndarray

    def profile(self, x) -> np.ndarray:
        return np.asarray(x, dtype=float) @ self.basis.T

    def project(self, values) -> np.ndarray:
        """Mode coefficients of a profile sampled on the quadrature nodes."""
        return np.asarray(values, dtype=float) @ (self.weights[:, None] * self.basis)

    def l2_inner(self, f_values, g_values) -> np.ndarray:
        return np.asarray(f_values * g_values) @ self.weights

    def density_running_cost(self, x, u) -> np.ndarray:
        """Running cost by quadrature of the density over the profiles."""
        p = self.params
        y, v = self.profile(np.atleast_2d(x)), self.profile(np.atleast_2d(u))
        dens = p.control_weight * v**2 + p.state_weight * (1.0 - np.exp(-(y**2) / p.state_scale**2))
        return dens @ self.weights


def _noise(p: HeatModelParams, dim: int):
    if p.sigma == 0:
        raise ModelError("noise intensity must be non-zero")
    if p.sigma_amp == 0:
        return ConstantDiffusion(p.sigma, dim)
    if abs(p.sigma_amp) >= 1:
        raise ModelError("noise modulation changes sign on [0, T]")
    return ModulatedDiffusion(p.sigma, dim, p.sigma_amp, p.sigma_freq)


def _initial(p: HeatModelParams, xi: np.ndarray) -> np.ndarray:
    if p.initial == "sine":
        return p.initial_amplitude * np.sin(p.initial_mode * np.pi * xi)
    if p.initial == "parabola":
        return 4.0 * p.initial_amplitude * xi * (1.0 - xi)
    if p.initial == "zero":
        return np.zeros_like(xi)
    raise ModelError(f"unknown initial profile {p.initial!r}")


def build(params: HeatModelParams, n_nodes: int = QUADRATURE_NODES) -> HeatModel:
    d = int(params.modes)
    if d < 1:
        raise ModelError("need at least one mode")
    xi, basis = sine_basis(d, n_nodes)
    weights = simpson_weights(n_nodes)
    wb = weights[:, None] * basis
    diffusion = _noise(params, d)
    spec = GalerkinSpec(
        dim=d,
        a_eigenvalues=dirichlet_eigenvalues(d),
        drift=HeatNemytskiiDrift(d, Reaction(params.reaction, params.reaction_amp), n_nodes),
        diffusion=diffusion,
        horizon=params.horizon,
    )

    amp, kappa, center = params.terminal_amplitude, params.terminal_kappa, params.terminal_center

    def terminal(x):
        return (amp * expit(kappa * (x @ basis.T - center))) @ weights

    phi = TerminalSpec(
        "heat-sigmoid-density", {"amplitude": amp, "kappa": kappa, "center": center}, abs(amp), terminal
    )

    scale = params.state_scale

    def state_cost(x):
        return (1.0 - np.exp(-((x @ basis.T) ** 2) / scale**2)) @ weights

    cost = RunningCost(
        control_weight=params.control_weight,
        state_weight=params.state_weight,
        state_scale=scale,
        state_func=state_cost,
        # Cauchy-Schwarz with unit total quadrature weight and orthonormal modes
        state_lipschitz=_SAT_SLOPE / scale * (1.0 + 1e-9),
    )
    problem = ControlProblem(
        cost, ActionMap("linear", params.gain * np.eye(d)), AdmissibleSet("all"), phi, diffusion
    )
    x0 = _initial(params, xi) @ wb
    return HeatModel(params, spec, problem, x0, xi, basis, weights)


def mean_mode_energies(model: HeatModel, steps: int) -> np.ndarray:
    """Squared modes of ``E X_T`` for linear reaction and no control.

    The mean of the exponential-Euler scheme obeys the noise-free recursion
    exactly when ``F`` is linear.
    """
    if model.params.reaction not in ("zero", "linear"):
        raise ModelError("mean propagation is exact only for linear reactions")
    grid = TimeGrid(0.0, model.params.horizon, steps)
    decay = np.exp(model.spec.a_eigenvalues * grid.dt)
    x = model.x0.copy()
    for i in range(grid.steps):
        x = decay * (x + model.spec.drift(grid.node(i), x) * grid.dt)
    return x**2


def parseval_gap(model: HeatModel, rng: np.random.Generator, samples: int = 20) -> float:
    """Largest gap between quadrature and mode-space inner products."""
    a = rng.standard_normal((samples, model.spec.dim))
    b = rng.standard_normal((samples, model.spec.dim))
    quad = model.l2_inner(model.profile(a), model.profile(b))
    return float(np.max(np.abs(quad - np.sum(a * b, axis=1))))


@dataclass
class TruncationRow:
    modes: int
    value: float
    value_se: float
    cost: float | None
    cost_se: float | None
    y_clip_rate: float
    z_clip_rate: float


@dataclass
class TruncationReport:
    rows: list[TruncationRow]
    deltas: list[float]
    relative_last: float
    tolerance: float
    passed: bool
    energy_deltas: list[float] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "rows": [vars(r) for r in self.rows],
            "deltas": self.deltas,
            "relative_last": self.relative_last,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "energy_deltas": self.energy_deltas,
        }


def truncation_study(
    params: HeatModelParams,
    dims: Sequence[int],
    steps: int = 64,
    paths: int = 20_000,
    seed: int = 0,
    basis_degree: int = 2,
    tolerance: float = 0.02,
    with_feedback: bool = True,
    threads: int = 1,
) -> TruncationReport:
    """Value (and feedback cost) at each truncation level.

    Passes iff the relative change between the two finest levels is below
    ``tolerance``.
    """
    dims = sorted(int(d) for d in dims)
    if len(dims) < 2:
        raise ValueError("need at least two truncation levels")
    rows = []
    for d in dims:
        model = build(params.with_modes(d))
        grid = TimeGrid(0.0, params.horizon, steps)
        bundle = simulate(model.spec, grid, model.x0, paths, seed, antithetic=True, threads=threads)
        driver = hamiltonian_driver(model.problem)
        sol = solve(model.spec, grid, bundle, driver, model.problem.terminal, basis_degree=basis_degree)
        se = float(sol.value_se(0, model.x0[None])[0])
        cost = cost_se = None
        if with_feedback:
            run = closed_loop(model.problem, model.spec, grid, model.x0, sol, paths, seed + 1, antithetic=True)
            cost, cost_se = run.cost.mean, run.cost.se
        rows.append(
            TruncationRow(d, sol.y0, se, cost, cost_se, sol.diagnostics["y_clip_rate"], sol.diagnostics["z_clip_rate"])
        )
    deltas = [abs(b.value - a.value) for a, b in zip(rows, rows[1:])]
    ref = rows[-2].value
    rel = deltas[-1] / abs(ref) if ref != 0 else (0.0 if deltas[-1] == 0 else math.inf)
    energy = None
    if params.reaction in ("zero", "linear"):
        finest = mean_mode_energies(build(params.with_modes(dims[-1])), steps)
        totals = [float(np.sum(finest[:d])) for d in dims]
        energy = [b - a for a, b in zip(totals, totals[1:])]
    return TruncationReport(rows, deltas, rel, tolerance, rel < tolerance or deltas[-1] == 0, energy)
