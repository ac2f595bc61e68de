"""Bismut-Elworthy weights and gradient estimators.

The weight at node ``i`` is

    U_i = (t_i - t_0)^{-1} sum_{j<i} <G^{-1}(t_j) D_{j+1} h, dW_j>

where ``D`` is the variational flow.  ``D_{j+1}`` depends on the path only
through ``X_j``, so the integrand is still adapted; pairing it with
``dW_j`` makes ``E[f(X_i) U_i] = d/dx E[f(X_i)] h`` an exact Gaussian
integration-by-parts identity for the exponential-Euler scheme.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from .bsde import BsdeSolution, DriverSpec, FitReport, TerminalSpec, loglog_fit
from .forward import PathBundle
from .model import GalerkinSpec, ModelError


@dataclass(eq=False)
class WeightProcess:
    values: np.ndarray  # (M, steps); column i-1 holds node i
    direction: np.ndarray
    origin: tuple[float, np.ndarray]
    elapsed: np.ndarray  # t_i - t_0 for i = 1..steps
    antithetic: bool = False

    def at(self, i: int) -> np.ndarray:
        if i <= 0:
            raise ModelError("the weight is undefined at the initial node")
        return self.values[:, i - 1]

    def independent(self, samples: np.ndarray) -> np.ndarray:
        if not self.antithetic:
            return samples
        return 0.5 * (samples[0::2] + samples[1::2])


def compute_weights(bundle: PathBundle, spec: GalerkinSpec) -> WeightProcess:
    if bundle.flows is None:
        raise ModelError("bundle has no variational flow; call forward.variational first")
    grid = bundle.grid
    if grid.steps == 0:
        raise ModelError("zero-length horizon: the weight needs at least one step")
    inc = np.empty((bundle.paths, grid.steps))
    for j in range(grid.steps):
        ginv = spec.diffusion.inverse(grid.node(j))
        inc[:, j] = np.einsum("md,md->m", bundle.flows[:, j + 1, :] * ginv, bundle.dw[:, j, :])
    elapsed = grid.nodes[1:] - grid.t0
    values = np.cumsum(inc, axis=1) / elapsed
    return WeightProcess(values, bundle.direction.copy(), (grid.t0, bundle.x0.copy()), elapsed, bundle.antithetic)


# ---------------------------------------------------------------------------
# moment bounds


@dataclass
class MomentReport:
    q: float
    elapsed: np.ndarray
    norms: np.ndarray
    se: np.ndarray
    fit: FitReport
    fit_nodes: list[int]
    sup_norm: float
    sup_constant: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "q": self.q,
            "slope": self.fit.slope,
            "constant": self.fit.constant,
            "r2": self.fit.r2,
            "fit_nodes": self.fit_nodes,
            "sup_norm": self.sup_norm,
            "sup_constant": self.sup_constant,
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["elapsed", f"norm_q{self.q:g}", "se"])
            for s, n, e in zip(self.elapsed, self.norms, self.se):
                w.writerow([repr(float(s)), repr(float(n)), repr(float(e))])


def geometric_nodes(steps: int) -> list[int]:
    nodes, i = [], 1
    while i < steps:
        nodes.append(i)
        i *= 2
    nodes.append(steps)
    return nodes


def u_moment_report(weights: WeightProcess, q: float) -> MomentReport:
    """``(E|U_s|^q)^{1/q}`` per node, its log-log slope, and the sup statistic.

    The slope is fitted on geometrically spaced nodes so that every scale
    of ``s - t`` carries the same weight.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    powered = np.abs(weights.values) ** q
    moments = powered.mean(axis=0)
    draws = weights.independent(powered)
    moment_se = draws.std(axis=0, ddof=1) / math.sqrt(draws.shape[0])
    norms = moments ** (1.0 / q)
    se = norms / (q * moments) * moment_se
    steps = weights.values.shape[1]
    idx = geometric_nodes(steps)
    fit = loglog_fit(weights.elapsed[[i - 1 for i in idx]], norms[[i - 1 for i in idx]])

    horizon = float(weights.elapsed[-1])
    tail = weights.elapsed >= horizon / 2.0
    sup = np.max(np.abs(weights.values[:, tail]), axis=1)
    sup_norm = float(np.mean(sup**q) ** (1.0 / q))
    return MomentReport(q, weights.elapsed, norms, se, fit, idx, sup_norm, sup_norm * math.sqrt(horizon))


# ---------------------------------------------------------------------------
# gradient estimators


@dataclass
class GradientEstimate:
    estimate: float
    se: float
    n_paths: int
    horizon: float
    driver_kind: str = "linear"

    def to_dict(self) -> dict[str, Any]:
        return dict(vars(self))


def _estimate(samples: np.ndarray, weights: WeightProcess) -> tuple[float, float]:
    draws = weights.independent(samples)
    return float(np.mean(samples)), float(np.std(draws, ddof=1) / math.sqrt(draws.shape[0]))


def _terminal_samples(f: TerminalSpec, bundle: PathBundle, weights: WeightProcess) -> np.ndarray:
    return f(bundle.terminal) * weights.at(bundle.steps)


def linear_gradient(f: TerminalSpec, bundle: PathBundle, weights: WeightProcess) -> GradientEstimate:
    """Estimate ``<grad_x E f(X_T), h>`` by ``E[f(X_T) U_T]``."""
    est, se = _estimate(_terminal_samples(f, bundle, weights), weights)
    return GradientEstimate(est, se, bundle.paths, bundle.grid.t1 - bundle.grid.t0)


def nonlinear_gradient(
    driver: DriverSpec,
    terminal: TerminalSpec,
    bsde: BsdeSolution,
    bundle: PathBundle,
    weights: WeightProcess,
    s: int = 0,
) -> GradientEstimate:
    """Estimate ``E[grad_x Y_s h]`` from the nonlinear Bismut formula.

    The time integral is the left-point sum over nodes ``max(s, 1) .. N-1``,
    the same quadrature the backward scheme uses; node 0 is skipped because
    the weight is undefined there.
    """
    grid = bundle.grid
    if bsde.grid != grid or bsde.y.shape[0] != bundle.paths:
        raise ModelError("BSDE solution and path bundle are not aligned")
    if weights.values.shape != (bundle.paths, grid.steps):
        raise ModelError("weights and path bundle are not aligned")
    if not 0 <= s < grid.steps:
        raise ModelError(f"node {s} outside [0, {grid.steps})")
    samples = _terminal_samples(terminal, bundle, weights)
    for i in range(max(s, 1), grid.steps):
        psi = driver(grid.node(i), bundle.states[:, i, :], bsde.y[:, i], bsde.z[:, i, :])
        samples = samples + psi * weights.at(i) * grid.dt
    est, se = _estimate(samples, weights)
    return GradientEstimate(est, se, bundle.paths, grid.t1 - grid.t0, driver.kind)


@dataclass
class GradientBoundReport:
    fit: FitReport | None
    degenerate: bool
    passed: bool

    def to_dict(self) -> dict[str, Any]:
        return {
            "fit": None if self.fit is None else self.fit.to_dict(),
            "degenerate": self.degenerate,
            "passed": self.passed,
        }


def gradient_bound_check(
    horizons: Sequence[float], estimates: Sequence[float], floor: float = 1e-3, min_slope: float = -0.6
) -> GradientBoundReport:
    """Fitted exponent of ``|grad Y|`` against ``T - t``; passes iff >= ``min_slope``.

    All estimates below ``floor`` in magnitude means the gradient vanishes
    and no exponent is fitted.
    """
    if len(horizons) < 4:
        raise ValueError("need at least 4 horizons")
    mags = np.abs(np.asarray(estimates, dtype=float))
    if np.all(mags < floor):
        return GradientBoundReport(None, True, True)
    fit = loglog_fit(horizons, mags)
    return GradientBoundReport(fit, False, fit.slope >= min_slope)
