"""Backward regression solver for the Markovian quadratic BSDE.

Backward induction on the forward grid::

    Z_i = E[(Y_{i+1} - E[Y_{i+1} | X_i]) dW_i | X_i] / dt
    Y_i = E[Y_{i+1} | X_i] + psi(t_i, X_i, Y_i, Z_i) dt

Conditional expectations are least-squares projections on polynomials of
total degree <= ``basis_degree`` in the (standardised) state.  The implicit
equation in ``Y_i`` is resolved by Picard sweeps.  ``|Z|`` is truncated at
``clip_C (T - t_i)^{-1/2}`` and ``|Y|`` at the a-priori bound; both
truncations are counted and reported, they are a safety net only.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

import numpy as np
from scipy import linalg
from scipy.special import expit

from .forward import BLOCK_PATHS, PathBundle
from .model import GalerkinSpec, ModelError, TimeGrid

RIDGE = 1e-10
COND_LIMIT = 1e12


class RegressionError(RuntimeError):
    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


# ---------------------------------------------------------------------------
# terminal data


def _weights(params: Mapping[str, Any], dim: int) -> np.ndarray:
    w = params.get("weights")
    if w is None:
        w = np.zeros(dim)
        w[0] = 1.0
    return np.broadcast_to(np.asarray(w, dtype=float), (dim,)).copy()


@dataclass(frozen=True, eq=False)
class TerminalSpec:
    """Bounded continuous terminal map with its sup bound ``K_phi``."""

    kind: str
    params: dict
    K_phi: float
    func: Callable[[np.ndarray], np.ndarray]

    def __call__(self, x) -> np.ndarray:
        return self.func(np.atleast_2d(np.asarray(x, dtype=float)))

    def shifted(self, c: float) -> "TerminalSpec":
        """``phi + c``."""
        return TerminalSpec(
            f"{self.kind}+const", {**self.params, "shift": c}, self.K_phi + abs(c), lambda x: self.func(x) + c
        )

    def to_dict(self) -> dict[str, Any]:
        plain = {k: v for k, v in self.params.items() if isinstance(v, (int, float, str, list))}
        return {"kind": self.kind, "params": plain, "K_phi": self.K_phi}


def make_terminal(kind: str, params: Mapping[str, Any] | None, dim: int) -> TerminalSpec:
    p = dict(params or {})
    if kind == "constant":
        c = float(p.get("value", 0.0))
        return TerminalSpec(kind, p, abs(c), lambda x: np.full(x.shape[0], c))
    w = _weights(p, dim)
    if kind == "linear-clipped":
        clip = float(p.get("clip", 10.0))
        b = float(p.get("offset", 0.0))
        return TerminalSpec(kind, p, clip, lambda x: np.clip(x @ w + b, -clip, clip))
    if kind == "quadratic-clipped":
        cap = float(p.get("cap", 10.0))
        s = float(p.get("scale", 1.0))
        c = np.broadcast_to(np.asarray(p.get("center", 0.0), dtype=float), (dim,))
        return TerminalSpec(kind, p, cap, lambda x: np.minimum(s * np.sum((x - c) ** 2, axis=1), cap))
    if kind == "abs-clipped":
        cap = float(p.get("cap", 10.0))
        return TerminalSpec(kind, p, cap, lambda x: np.minimum(np.abs(x @ w), cap))
    if kind == "steep-sigmoid":
        kappa = float(p.get("kappa", 50.0))
        center = float(p.get("center", 0.0))
        amp = float(p.get("amplitude", 1.0))
        return TerminalSpec(kind, p, abs(amp), lambda x: amp * expit(kappa * (x @ w - center)))
    if kind == "indicator-smoothed":
        lo = float(p.get("lo", -1.0))
        hi = float(p.get("hi", 1.0))
        width = float(p.get("width", 0.05))

        def indicator(x):
            s = x @ w
            return expit((s - lo) / width) * expit((hi - s) / width)

        return TerminalSpec(kind, p, 1.0, indicator)
    raise ModelError(f"unknown terminal kind {kind!r}")


# ---------------------------------------------------------------------------
# drivers


@dataclass(frozen=True, eq=False)
class DriverSpec:
    """Generator ``psi(t, x, y, z)`` with constants ``L_psi`` and ``K_psi``.

    ``func`` is set for drivers assembled outside the catalog (the control
    Hamiltonian, gridded regularisations); it receives batches
    ``x (M, d)``, ``y (M,)``, ``z (M, d)`` and returns ``(M,)``.
    """

    kind: str
    params: dict = field(default_factory=dict)
    L_psi: float = 0.0
    K_psi: float = 0.0
    func: Callable | None = None

    def __call__(self, t: float, x, y, z) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.broadcast_to(np.asarray(y, dtype=float), (x.shape[0],))
        z = np.atleast_2d(np.asarray(z, dtype=float))
        p = self.params
        if self.func is not None:
            return self.func(t, x, y, z)
        if self.kind == "zero":
            return np.zeros(x.shape[0])
        if self.kind == "constant":
            return np.full(x.shape[0], float(p["value"]))
        if self.kind == "pure-quadratic":
            return 0.5 * float(p.get("gamma", 1.0)) * np.sum(z**2, axis=1)
        if self.kind == "lipschitz-linear":
            kx = np.broadcast_to(np.asarray(p.get("kx", 0.0), dtype=float), (x.shape[1],))
            kz = np.broadcast_to(np.asarray(p.get("kz", 0.0), dtype=float), (z.shape[1],))
            return float(p.get("c0", 0.0)) + float(p.get("ky", 0.0)) * y + np.tanh(x) @ kx + z @ kz
        if self.kind == "custom-smooth":
            return (
                float(p.get("a", 0.0)) * np.cos(x.mean(axis=1))
                + float(p.get("b", 0.0)) * np.tanh(y)
                + 0.5 * float(p.get("gamma", 0.0)) * np.sum(z**2, axis=1)
            )
        raise ModelError(f"driver kind {self.kind!r} has no evaluator")

    @property
    def depends_on_y(self) -> bool:
        return self.kind in ("lipschitz-linear", "custom-smooth") or bool(self.params.get("y_dependent"))

    def to_dict(self) -> dict[str, Any]:
        plain = {k: v for k, v in self.params.items() if isinstance(v, (int, float, str, list))}
        return {"kind": self.kind, "params": plain, "L_psi": self.L_psi, "K_psi": self.K_psi}


def make_driver(kind: str, params: Mapping[str, Any] | None = None) -> DriverSpec:
    p = dict(params or {})
    if kind == "zero":
        return DriverSpec(kind, p, 0.0, 0.0)
    if kind == "constant":
        c = float(p.get("value", 0.0))
        p["value"] = c
        return DriverSpec(kind, p, 0.0, abs(c))
    if kind == "pure-quadratic":
        g = float(p.get("gamma", 1.0))
        return DriverSpec(kind, p, abs(g) / 2.0, 0.0)
    if kind == "lipschitz-linear":
        kx = np.abs(np.asarray(p.get("kx", 0.0), dtype=float))
        kz = np.asarray(p.get("kz", 0.0), dtype=float)
        lip = max(float(np.sqrt(np.sum(kx**2))), abs(float(p.get("ky", 0.0))), float(np.sqrt(np.sum(kz**2))))
        # |tanh| <= 1 so the state term adds at most the l1 norm of kx
        return DriverSpec(kind, p, lip, abs(float(p.get("c0", 0.0))) + float(np.sum(kx)))
    if kind == "custom-smooth":
        a, b, g = (abs(float(p.get(k, 0.0))) for k in ("a", "b", "gamma"))
        return DriverSpec(kind, p, max(a, b, g / 2.0), a)
    raise ModelError(f"unknown driver kind {kind!r}")


def validate_driver(driver: DriverSpec, dim: int, horizon: float, samples: int = 2000, seed: int = 0) -> dict:
    """Sample the growth and local-Lipschitz hypotheses of a driver."""
    rng = np.random.default_rng(seed)
    t = rng.uniform(0.0, horizon, samples)
    x1, x2 = rng.standard_normal((2, samples, dim)) * 2.0
    y1, y2 = rng.standard_normal((2, samples)) * 2.0
    z1, z2 = rng.standard_normal((2, samples, dim)) * 3.0
    zeros = np.zeros((1, dim))
    k_max = 0.0
    ratio = 0.0
    for m in range(samples):
        k_max = max(k_max, abs(float(driver(t[m], x1[m], 0.0, zeros)[0])))
        diff = abs(float(driver(t[m], x1[m], y1[m], z1[m])[0] - driver(t[m], x2[m], y2[m], z2[m])[0]))
        dz = np.linalg.norm(z1[m] - z2[m])
        scale = (
            np.linalg.norm(x1[m] - x2[m])
            + abs(y1[m] - y2[m])
            + dz * (1 + np.linalg.norm(z1[m]) + np.linalg.norm(z2[m]))
        )
        ratio = max(ratio, diff / scale)
    tol = 1e-9
    return {
        "K_psi": driver.K_psi,
        "measured_K": k_max,
        "L_psi": driver.L_psi,
        "measured_L": ratio,
        "passed": k_max <= driver.K_psi * (1 + tol) + 1e-12 and ratio <= driver.L_psi * (1 + tol) + 1e-12,
    }


# ---------------------------------------------------------------------------
# regression machinery


class PolynomialBasis:
    """Monomials of total degree <= ``degree`` in the standardised state.

    Components with no spread across paths (e.g. the deterministic initial
    node) are dropped, so the design never contains duplicated columns.
    """

    def __init__(self, x: np.ndarray, degree: int):
        if degree < 0:
            raise ModelError("basis_degree must be >= 0")
        self.mean = x.mean(axis=0)
        spread = x.std(axis=0)
        self.active = np.flatnonzero(spread > 1e-12 * (1.0 + np.abs(self.mean)))
        self.scale = np.where(spread > 0, spread, 1.0)
        self.degree = degree if self.active.size else 0
        k = self.active.size
        exps = [()]
        for deg in range(1, self.degree + 1):
            exps.extend(itertools.combinations_with_replacement(range(k), deg))
        self.exponents = exps

    @property
    def size(self) -> int:
        return len(self.exponents)

    def design(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        u = (x[:, self.active] - self.mean[self.active]) / self.scale[self.active]
        out = np.empty((x.shape[0], self.size))
        out[:, 0] = 1.0
        for j, combo in enumerate(self.exponents[1:], start=1):
            col = u[:, combo[0]].copy()
            for c in combo[1:]:
                col *= u[:, c]
            out[:, j] = col
        return out


def _gram(design: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Cross-path sums in fixed block order."""
    p = design.shape[1]
    gram = np.zeros((p, p))
    rhs = np.zeros((p, targets.shape[1]))
    for a in range(0, design.shape[0], BLOCK_PATHS):
        b = design[a : a + BLOCK_PATHS]
        gram += b.T @ b
        rhs += b.T @ targets[a : a + BLOCK_PATHS]
    return gram, rhs


def least_squares(design: np.ndarray, targets: np.ndarray, step: int) -> tuple[np.ndarray, np.ndarray, bool]:
    """Solve the normal equations; returns coefficients, inverse Gram, ridge flag."""
    m = design.shape[0]
    gram, rhs = _gram(design, targets)
    gram /= m
    rhs /= m
    ridged = False
    if gram.shape[0] > 1 and np.linalg.cond(gram) > COND_LIMIT:
        gram = gram + RIDGE * np.eye(gram.shape[0])
        ridged = True
    try:
        factor = linalg.cho_factor(gram)
    except linalg.LinAlgError:
        raise RegressionError(f"singular regression at step {step}; lower basis_degree", step) from None
    coef = linalg.cho_solve(factor, rhs)
    inv = linalg.cho_solve(factor, np.eye(gram.shape[0])) / m
    if not np.all(np.isfinite(coef)):
        raise RegressionError(f"non-finite regression coefficients at step {step}", step)
    return coef, inv, ridged


@dataclass
class NodeFit:
    """Regression surface at one grid node."""

    basis: PolynomialBasis
    coef_y: np.ndarray
    coef_z: np.ndarray
    gram_inv: np.ndarray
    resid_var: float


# ---------------------------------------------------------------------------
# solution


@dataclass(eq=False)
class BsdeSolution:
    grid: TimeGrid
    y: np.ndarray
    z: np.ndarray
    y0: float
    bound_y: float
    clip_c: float
    driver: DriverSpec
    terminal: TerminalSpec
    fits: list[NodeFit | None]
    picard_iters: int
    diagnostics: dict[str, Any]

    @property
    def z0(self) -> np.ndarray:
        if self.grid.steps == 0:
            return np.zeros(self.z.shape[2])
        return self.z[:, 0, :].mean(axis=0)

    def z_clip_level(self, i: int) -> float:
        return self.clip_c / math.sqrt(self.grid.t1 - self.grid.node(i))

    def surface(self, i: int, x) -> tuple[np.ndarray, np.ndarray]:
        """Regression surrogates ``(v(t_i, x), Z(t_i, x))`` at arbitrary states."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if i == self.grid.steps:
            return self.terminal(x), np.full((x.shape[0], x.shape[1]), np.nan)
        fit = self.fits[i]
        design = fit.basis.design(x)
        cond = design @ fit.coef_y[:, 0]
        z = _clip_rows(design @ fit.coef_z, self.z_clip_level(i))[0]
        y, _ = _picard(self.driver, self.grid.node(i), x, cond, z, self.grid.dt, self.picard_iters)
        return np.clip(y, -self.bound_y, self.bound_y), z

    def z_surface(self, i: int, x) -> np.ndarray:
        """Clipped regression surrogate of ``Z(t_i, x)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        fit = self.fits[i]
        return _clip_rows(fit.basis.design(x) @ fit.coef_z, self.z_clip_level(i))[0]

    def value_se(self, i: int, x) -> np.ndarray:
        """Standard error of the regressed conditional expectation at ``x``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        fit = self.fits[i]
        design = fit.basis.design(x)
        return np.sqrt(fit.resid_var * np.einsum("ij,jk,ik->i", design, fit.gram_inv, design))

    def summary(self) -> dict[str, Any]:
        return {
            "y0": self.y0,
            "z0": self.z0.tolist(),
            "bound_Y": self.bound_y,
            "max_abs_Y": float(np.max(np.abs(self.y))),
            "clip_C": self.clip_c,
            "y_clip_rate": self.diagnostics["y_clip_rate"],
            "z_clip_rate": self.diagnostics["z_clip_rate"],
            "ridge_steps": self.diagnostics["ridge_steps"],
            "max_residual_rms": max(self.diagnostics["residual_rms"], default=0.0),
        }

    def write_csv(self, path) -> None:
        """Per-node ``t, mean Y, mean |Z|, clip rate``."""
        nodes = self.grid.nodes
        clip = self.diagnostics["z_clip_per_step"] + [0.0]
        zabs = np.linalg.norm(self.z, axis=2).mean(axis=0).tolist() + [float("nan")]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mean_Y", "mean_abs_Z", "z_clip_rate"])
            for i, t in enumerate(nodes):
                w.writerow([repr(float(t)), repr(float(self.y[:, i].mean())), repr(float(zabs[i])), repr(clip[i])])


def _clip_rows(z: np.ndarray, level: float) -> tuple[np.ndarray, int]:
    norms = np.linalg.norm(z, axis=1)
    hit = norms > level
    if hit.any():
        z = z.copy()
        z[hit] *= (level / norms[hit])[:, None]
    return z, int(hit.sum())


def _picard(driver, t, x, cond, z, dt, iters):
    y = cond.copy()
    used = 0
    for _ in range(iters):
        new = cond + driver(t, x, y, z) * dt
        used += 1
        converged = np.array_equal(new, y)
        y = new
        if converged or not driver.depends_on_y:
            break
    return y, used


def a_priori_bound(driver: DriverSpec, terminal: TerminalSpec, horizon: float) -> float:
    """``e^{L_psi (T-t)} (K_phi + K_psi (T-t))``."""
    return math.exp(driver.L_psi * horizon) * (terminal.K_phi + driver.K_psi * horizon)


def solve(
    spec: GalerkinSpec,
    grid: TimeGrid,
    bundle: PathBundle,
    driver: DriverSpec,
    terminal: TerminalSpec,
    basis_degree: int = 3,
    picard_iters: int = 3,
    clip_multiplier: float = 4.0,
) -> BsdeSolution:
    if picard_iters < 1:
        raise ModelError("picard_iters must be >= 1")
    if basis_degree < 0:
        raise ModelError("basis_degree must be >= 0")
    if bundle.grid != grid:
        raise ModelError("path bundle was simulated on a different grid")
    m, n, d = bundle.paths, grid.steps, spec.dim
    horizon = grid.t1 - grid.t0
    bound_y = a_priori_bound(driver, terminal, horizon)
    clip_c = clip_multiplier * spec.g_inverse_bound * bound_y * math.exp(spec.lipschitz_f * horizon)
    dt = grid.dt

    y = np.empty((m, n + 1))
    z = np.zeros((m, n, d))
    y[:, n] = terminal(bundle.states[:, n, :])
    if not np.all(np.isfinite(y[:, n])):
        raise RegressionError("non-finite terminal values", n)
    fits: list[NodeFit | None] = [None] * (n + 1)
    residual_rms, picard_used, ridge_steps = [0.0] * n, [0] * n, []
    y_clip, z_clip = 0, [0.0] * n

    for i in range(n - 1, -1, -1):
        x = bundle.states[:, i, :]
        basis = PolynomialBasis(x, basis_degree)
        design = basis.design(x)
        coef_y, inv, ridged = least_squares(design, y[:, i + 1 : i + 2], i)
        cond = design @ coef_y[:, 0]
        resid = y[:, i + 1] - cond
        target = resid[:, None] * bundle.dw[:, i, :] / dt
        coef_z, _, ridged_z = least_squares(design, target, i)
        if ridged or ridged_z:
            ridge_steps.append(i)
        zi, hits = _clip_rows(design @ coef_z, clip_c / math.sqrt(grid.t1 - grid.node(i)))
        yi, used = _picard(driver, grid.node(i), x, cond, zi, dt, picard_iters)
        # rounding-level excursions at an attained bound are not activations
        over = np.abs(yi) > bound_y * (1.0 + 1e-12) + 1e-14
        y_clip += int(over.sum())
        yi = np.clip(yi, -bound_y, bound_y)
        if not (np.all(np.isfinite(yi)) and np.all(np.isfinite(zi))):
            raise RegressionError(f"non-finite solution at step {i}", i)
        y[:, i] = yi
        z[:, i, :] = zi
        dof = max(m - design.shape[1], 1)
        fits[i] = NodeFit(basis, coef_y, coef_z, inv, float(resid @ resid) / dof)
        residual_rms[i] = float(np.sqrt(np.mean(resid**2)))
        picard_used[i] = used
        z_clip[i] = hits / m

    diagnostics = {
        "residual_rms": residual_rms,
        "picard_iterations": picard_used,
        "ridge_steps": sorted(ridge_steps),
        "y_clip_rate": y_clip / max(m * n, 1),
        "z_clip_rate": float(np.mean(z_clip)) if n else 0.0,
        "z_clip_per_step": z_clip,
    }
    return BsdeSolution(
        grid=grid,
        y=y,
        z=z,
        y0=float(y[:, 0].mean()),
        bound_y=bound_y,
        clip_c=clip_c,
        driver=driver,
        terminal=terminal,
        fits=fits,
        picard_iters=picard_iters,
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# a-priori estimates and stability


@dataclass
class FitReport:
    slope: float
    intercept: float
    r2: float
    n: int
    degenerate: bool = False

    @property
    def constant(self) -> float:
        return math.exp(self.intercept)

    def to_dict(self) -> dict[str, Any]:
        return {**vars(self), "constant": self.constant}


def loglog_fit(x: Sequence[float], y: Sequence[float], min_points: int = 2) -> FitReport:
    """OLS of ``log y`` on ``log x``; non-positive ``y`` samples are excluded."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (y > 0) & (x > 0) & np.isfinite(y)
    if keep.sum() < min_points:
        raise ValueError("not enough positive samples for a log-log fit")
    lx, ly = np.log(x[keep]), np.log(y[keep])
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum((ly - pred) ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return FitReport(float(slope), float(intercept), r2, int(keep.sum()))


def z_singularity_fit(horizons: Sequence[float], z_norms: Sequence[float]) -> FitReport:
    """Fitted exponent of ``|Z_t|`` against ``T - t`` (compare with -1/2)."""
    if len(horizons) < 5:
        raise ValueError("need at least 5 horizon values")
    return loglog_fit(horizons, z_norms)


def mp_norm(solution: BsdeSolution, p: float) -> float:
    """``(E (int |Z|^2 dt)^{p/2})^{1/p}`` with Z piecewise constant on the grid."""
    if p < 1:
        raise ValueError("p must be >= 1")
    energy = np.sum(np.sum(solution.z**2, axis=2), axis=1) * solution.grid.dt
    return float(np.mean(energy ** (p / 2.0)) ** (1.0 / p))


@dataclass
class ConvergenceReport:
    levels: list[float]
    dy: list[float]
    dz: list[float]
    approx_error: list[float]

    @property
    def monotone(self) -> bool:
        return all(b <= a * (1 + 1e-9) + 1e-15 for a, b in zip(self.dy, self.dy[1:])) and all(
            b <= a * (1 + 1e-9) + 1e-15 for a, b in zip(self.dz, self.dz[1:])
        )

    @property
    def reduction(self) -> tuple[float, float]:
        """Coarsest-to-finest shrink factors of the Y and Z deltas."""

        def ratio(v):
            return math.inf if v[-1] == 0 else v[0] / v[-1]

        return ratio(self.dy), ratio(self.dz)

    def to_dict(self) -> dict[str, Any]:
        return {
            "levels": self.levels,
            "dy": self.dy,
            "dz": self.dz,
            "approx_error": self.approx_error,
            "monotone": self.monotone,
            "reduction": list(self.reduction),
        }


def solution_distance(a: BsdeSolution, b: BsdeSolution) -> tuple[float, float]:
    """Path-averaged sup distance of Y and empirical M^2 distance of Z."""
    dy = float(np.mean(np.max(np.abs(a.y - b.y), axis=1)))
    dz = float(np.sqrt(np.mean(np.sum((a.z - b.z) ** 2, axis=(1, 2)) * a.grid.dt)))
    return dy, dz


def stability_under_terminal_approx(
    spec, grid, bundle, driver, terminal, approximations, basis_degree=3, picard_iters=3
) -> ConvergenceReport:
    """Distances to the reference solution for terminal maps ``phi_n``.

    ``approximations`` is a sequence of ``(level, TerminalSpec, sup_error)``.
    """
    ref = solve(spec, grid, bundle, driver, terminal, basis_degree, picard_iters)
    report = ConvergenceReport([], [], [], [])
    for level, phi_n, err in approximations:
        sol = solve(spec, grid, bundle, driver, phi_n, basis_degree, picard_iters)
        dy, dz = solution_distance(ref, sol)
        report.levels.append(level)
        report.dy.append(dy)
        report.dz.append(dz)
        report.approx_error.append(err)
    return report


def stability_under_driver_approx(
    spec, grid, bundle, driver, terminal, approximations, basis_degree=3, picard_iters=3
) -> ConvergenceReport:
    """Same protocol with generators ``psi_n`` in place of ``psi``."""
    ref = solve(spec, grid, bundle, driver, terminal, basis_degree, picard_iters)
    report = ConvergenceReport([], [], [], [])
    for level, psi_n, err in approximations:
        sol = solve(spec, grid, bundle, psi_n, terminal, basis_degree, picard_iters)
        dy, dz = solution_distance(ref, sol)
        report.levels.append(level)
        report.dy.append(dy)
        report.dz.append(dz)
        report.approx_error.append(err)
    return report
