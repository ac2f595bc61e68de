"""Hamiltonian, feedback selection, closed-loop simulation and costs.

The controlled drift is ``R(u)``.  With ``Z = grad v . G`` the Hamiltonian
seen by the backward equation is

    psi(t, x, z) = inf_{u in K} g(t, x, u) + <z, G(t)^{-1} R(u)>

so that ``<grad v, R(u)> = <Z, G^{-1} R(u)>``.  Costs are quadratic in the
action plus a bounded state part; ``R`` acts componentwise, which makes the
minimisation separable across action components.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .bsde import BsdeSolution, DriverSpec, TerminalSpec
from .forward import brownian_increments
from .model import Diffusion, GalerkinSpec, ModelError, TimeGrid

SCAN_POINTS = 257
GOLDEN_ITERS = 80
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0
# sup_r 2r e^{-r^2}, the slope of 1 - e^{-r^2}
_SAT_SLOPE = math.sqrt(2.0) * math.exp(-0.5)


class ControlError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class RunningCost:
    """``g(t, x, u) = q |u|^2 + a s(x)`` with ``0 <= s <= 1``.

    The default state part is ``1 - exp(-|x - target|^2 / scale^2)``;
    ``state_func`` replaces it (with its declared Lipschitz constant).
    """

    control_weight: float = 1.0
    state_weight: float = 0.0
    state_scale: float = 1.0
    target: np.ndarray | None = None
    state_func: Callable[[np.ndarray], np.ndarray] | None = None
    state_lipschitz: float | None = None

    def __post_init__(self):
        if not self.control_weight > 0:
            raise ControlError("control weight must be positive (coercivity)")
        if self.state_weight < 0:
            raise ControlError("state weight must be non-negative")
        if self.state_func is not None and self.state_lipschitz is None:
            raise ControlError("a custom state cost needs a declared Lipschitz constant")

    def state_part(self, t: float, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.state_weight == 0:
            return np.zeros(x.shape[0])
        if self.state_func is not None:
            return self.state_weight * self.state_func(x)
        dx = x if self.target is None else x - self.target
        return self.state_weight * (1.0 - np.exp(-np.sum(dx**2, axis=1) / self.state_scale**2))

    def __call__(self, t: float, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return self.control_weight * np.sum(np.atleast_2d(u) ** 2, axis=1) + self.state_part(t, x)

    @property
    def growth(self) -> float:
        """``c`` in ``0 <= g <= c(1 + |u|^2)``."""
        return max(self.control_weight, self.state_weight)

    @property
    def coercivity(self) -> tuple[float, float]:
        """``(C, R)`` with ``g >= C|u|^2`` for ``|u| >= R``."""
        return self.control_weight, 1.0

    @property
    def lipschitz_x(self) -> float:
        if self.state_func is not None:
            return self.state_weight * self.state_lipschitz
        return self.state_weight * _SAT_SLOPE / self.state_scale

    def scaled(self, lam: float) -> "RunningCost":
        return RunningCost(
            self.control_weight * lam,
            self.state_weight * lam,
            self.state_scale,
            self.target,
            self.state_func,
            self.state_lipschitz,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "control_weight": self.control_weight,
            "state_weight": self.state_weight,
            "state_scale": self.state_scale,
            "custom_state": self.state_func is not None,
        }


@dataclass(frozen=True, eq=False)
class ActionMap:
    """``R(u) = M u`` (linear) or ``R(u) = M tanh(u)`` (saturating)."""

    kind: str
    matrix: np.ndarray

    def __post_init__(self):
        if self.kind not in ("linear", "saturating"):
            raise ControlError(f"unknown action map {self.kind!r}")
        m = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        object.__setattr__(self, "matrix", m)

    @property
    def state_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def action_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def growth(self) -> float:
        """``c`` in ``|R(u)| <= c(1 + |u|)``."""
        return float(np.linalg.norm(self.matrix, 2))

    def __call__(self, u: np.ndarray) -> np.ndarray:
        u = np.atleast_2d(u)
        inner = u if self.kind == "linear" else np.tanh(u)
        return inner @ self.matrix.T

    def scaled(self, lam: float) -> "ActionMap":
        return ActionMap(self.kind, self.matrix * lam)


@dataclass(frozen=True, eq=False)
class AdmissibleSet:
    kind: str = "all"
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    points: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "box":
            lo, hi = np.atleast_1d(self.lo).astype(float), np.atleast_1d(self.hi).astype(float)
            if np.any(lo > hi):
                raise ControlError("box with lo > hi")
            object.__setattr__(self, "lo", lo)
            object.__setattr__(self, "hi", hi)
        elif self.kind == "finite":
            pts = np.atleast_2d(np.asarray(self.points, dtype=float))
            if pts.shape[0] == 0:
                raise ControlError("empty finite action set")
            # lexicographic order so the first minimiser is the smallest one
            order = np.lexsort(pts.T[::-1])
            object.__setattr__(self, "points", pts[order])
        elif self.kind != "all":
            raise ControlError(f"unknown admissible set {self.kind!r}")

    def contains(self, u: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        u = np.atleast_2d(u)
        if self.kind == "all":
            return np.all(np.isfinite(u), axis=1)
        if self.kind == "box":
            return np.all((u >= self.lo - tol) & (u <= self.hi + tol), axis=1)
        d = np.min(np.max(np.abs(u[:, None, :] - self.points[None]), axis=2), axis=1)
        return d <= tol

    def reference_point(self, action_dim: int) -> np.ndarray:
        """Smallest-norm element, used to size the minimiser ball."""
        if self.kind == "all":
            return np.zeros(action_dim)
        if self.kind == "box":
            return np.clip(np.zeros(action_dim), self.lo, self.hi)
        return self.points[np.argmin(np.linalg.norm(self.points, axis=1))]

    def sample(self, rng: np.random.Generator, n: int, action_dim: int, spread: float = 3.0) -> np.ndarray:
        if self.kind == "all":
            return rng.uniform(-spread, spread, (n, action_dim))
        if self.kind == "box":
            return rng.uniform(self.lo, self.hi, (n, action_dim))
        return self.points[rng.integers(0, self.points.shape[0], n)]

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind}
        if self.kind == "box":
            out.update(lo=self.lo.tolist(), hi=self.hi.tolist())
        if self.kind == "finite":
            out["points"] = self.points.tolist()
        return out


@dataclass(frozen=True, eq=False)
class ControlProblem:
    cost: RunningCost
    action: ActionMap
    admissible: AdmissibleSet
    terminal: TerminalSpec
    diffusion: Diffusion | None = None

    def __post_init__(self):
        k = self.action.action_dim
        if self.admissible.kind == "box" and self.admissible.lo.shape != (k,):
            raise ControlError("box dimension does not match the action dimension")
        if self.admissible.kind == "finite" and self.admissible.points.shape[1] != k:
            raise ControlError("finite set dimension does not match the action dimension")

    @property
    def action_dim(self) -> int:
        return self.action.action_dim

    def g_inverse(self, t: float) -> np.ndarray:
        if self.diffusion is None:
            return np.ones(self.action.state_dim)
        return self.diffusion.inverse(t)

    @property
    def g_inverse_bound(self) -> float:
        return 1.0 if self.diffusion is None else self.diffusion.inverse_bound

    @property
    def drift_growth(self) -> float:
        """Growth constant of ``G^{-1} R``."""
        return self.g_inverse_bound * self.action.growth

    @property
    def c_gamma(self) -> float:
        """``C`` such that minimisers lie in ``|u| <= C (1 + |z|)``.

        Comparing with the smallest admissible action ``u_ref`` (``m = |u_ref|``):
        any ``|u| >= R`` with ``C|u|^2 - c_R|z||u| > c(1+m^2) + c_R|z|(2+m)``
        is strictly worse, and that holds beyond
        ``(1+|z|)(c_R/C + sqrt(c(1+m^2)/C) + sqrt(c_R(2+m)/C)/2)``.
        """
        c = self.cost.growth
        cc, radius = self.cost.coercivity
        cr = self.drift_growth
        m = float(np.linalg.norm(self.admissible.reference_point(self.action_dim)))
        bound = cr / cc + math.sqrt(c * (1 + m * m) / cc) + 0.5 * math.sqrt(cr * (2 + m) / cc)
        return max(radius, bound)

    @property
    def L_psi(self) -> float:
        """Local-Lipschitz constant of the Hamiltonian in ``z`` (and in ``x``)."""
        return max(self.drift_growth * (1.0 + self.c_gamma), self.cost.lipschitz_x)

    @property
    def K_psi(self) -> float:
        """Bound on ``|psi(t, x, 0)| = inf_u g``."""
        u = self.admissible.reference_point(self.action_dim)
        return self.cost.control_weight * float(u @ u) + self.cost.state_weight

    def scaled(self, lam: float) -> "ControlProblem":
        return ControlProblem(self.cost.scaled(lam), self.action.scaled(lam), self.admissible, self.terminal, self.diffusion)

    def to_dict(self) -> dict[str, Any]:
        return {
            "cost": self.cost.to_dict(),
            "action": {"kind": self.action.kind, "matrix": self.action.matrix.tolist()},
            "admissible": self.admissible.to_dict(),
            "terminal": self.terminal.to_dict(),
            "C_gamma": self.c_gamma,
            "L_psi": self.L_psi,
            "K_psi": self.K_psi,
        }

    def validate(self, sample_count: int = 2000, seed: int = 0) -> dict[str, Any]:
        """Sampled growth and coercivity checks; raises on a coercivity breach."""
        rng = np.random.default_rng(seed)
        k = self.action_dim
        u = self.admissible.sample(rng, sample_count, k, spread=10.0)
        x = rng.normal(0.0, 2.0, (sample_count, self.action.state_dim))
        g = self.cost(0.0, x, u)
        un2 = np.sum(u**2, axis=1)
        cc, radius = self.cost.coercivity
        far = np.sqrt(un2) >= radius
        coercive = bool(np.all(g[far] >= cc * un2[far] - 1e-12))
        if not coercive:
            raise ControlError("running cost is not coercive on the admissible set; the Hamiltonian may be unbounded below")
        return {
            "nonnegative": bool(np.all(g >= 0)),
            "growth": bool(np.all(g <= self.cost.growth * (1 + un2) + 1e-12)),
            "coercive": coercive,
        }


# ---------------------------------------------------------------------------
# Hamiltonian


@dataclass
class HamiltonianResult:
    value: float
    minimizer: np.ndarray | None
    argmin_radius_bound: float


def _separable_scan(q, w, lo, hi):
    """Minimise ``q u^2 + w tanh(u)`` over ``[lo, hi]`` for every row.

    Dense scan then golden-section refinement inside the bracketing cells.
    """
    s = np.linspace(0.0, 1.0, SCAN_POINTS)
    grid = lo[:, None] + (hi - lo)[:, None] * s[None, :]
    vals = q * grid**2 + w[:, None] * np.tanh(grid)
    j = np.argmin(vals, axis=1)
    rows = np.arange(grid.shape[0])
    best_u, best_v = grid[rows, j], vals[rows, j]
    a = grid[rows, np.maximum(j - 1, 0)]
    b = grid[rows, np.minimum(j + 1, SCAN_POINTS - 1)]

    def f(u):
        return q * u**2 + w * np.tanh(u)

    for _ in range(GOLDEN_ITERS):
        c = b - _INVPHI * (b - a)
        d = a + _INVPHI * (b - a)
        left = f(c) <= f(d)
        b = np.where(left, d, b)
        a = np.where(left, a, c)
    u = 0.5 * (a + b)
    v = f(u)
    better = v < best_v
    return np.where(better, u, best_u), np.where(better, v, best_v)


def hamiltonian_batch(problem: ControlProblem, t: float, x: np.ndarray, z: np.ndarray):
    """Vectorised Hamiltonian over rows of ``(x, z)``.

    Returns ``(values, minimizers, radius)``; ``radius`` is the per-row
    ball ``C_gamma (1 + |z|)`` that contains every minimiser.
    """
    x, z = np.atleast_2d(x), np.atleast_2d(z)
    if not np.all(np.isfinite(z)):
        raise ControlError("non-finite z")
    q = problem.cost.control_weight
    state = problem.cost.state_part(t, x)
    radius = problem.c_gamma * (1.0 + np.linalg.norm(z, axis=1))
    zt = z * problem.g_inverse(t)
    adm = problem.admissible

    if adm.kind == "finite":
        pts = adm.points
        # <z, G^{-1} R(u_c)> for every candidate
        pair = zt @ problem.action(pts).T
        vals = q * np.sum(pts**2, axis=1)[None, :] + pair
        j = np.argmin(vals, axis=1)
        rows = np.arange(z.shape[0])
        return state + vals[rows, j], pts[j], radius

    w = zt @ problem.action.matrix  # (P, k)
    if problem.action.kind == "linear":
        u = -w / (2.0 * q)
        if adm.kind == "box":
            u = np.clip(u, adm.lo, adm.hi)
        vals = q * np.sum(u**2, axis=1) + np.sum(w * u, axis=1)
        if adm.kind == "all":
            vals = -np.sum(w**2, axis=1) / (4.0 * q)
        return state + vals, u, radius

    k = problem.action_dim
    u = np.empty_like(w)
    total = np.zeros(z.shape[0])
    for comp in range(k):
        lo, hi = -radius, radius.copy()
        if adm.kind == "box":
            lo = np.maximum(lo, adm.lo[comp])
            hi = np.minimum(hi, adm.hi[comp])
            # the box may sit entirely outside the ball; fall back to the box itself
            empty = lo > hi
            lo = np.where(empty, adm.lo[comp], lo)
            hi = np.where(empty, adm.hi[comp], hi)
        uc, vc = _separable_scan(q, w[:, comp], lo, hi)
        u[:, comp] = uc
        total += vc
    return state + total, u, radius


def hamiltonian(problem: ControlProblem, t: float, x, z) -> HamiltonianResult:
    vals, u, radius = hamiltonian_batch(problem, t, np.atleast_2d(x), np.atleast_2d(z))
    return HamiltonianResult(float(vals[0]), u[0].copy(), float(radius[0]))


def hamiltonian_driver(problem: ControlProblem) -> DriverSpec:
    def func(t, x, y, z):
        return hamiltonian_batch(problem, t, x, z)[0]

    return DriverSpec("hamiltonian", {"problem": problem.to_dict()}, problem.L_psi, problem.K_psi, func=func)


def hamiltonian_regularity_check(problem: ControlProblem, sample_count: int = 10_000, seed: int = 0, spread: float = 3.0) -> dict[str, Any]:
    """Sampled local-Lipschitz, x-Lipschitz, concavity and ball checks."""
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    d = problem.action.state_dim
    n = sample_count
    x1 = rng.normal(0.0, spread, (n, d))
    x2 = x1 + rng.normal(0.0, 1.0, (n, d)) * 10.0 ** rng.uniform(-3, 0, (n, 1))
    z1 = rng.normal(0.0, spread, (n, d))
    z2 = rng.normal(0.0, spread, (n, d))
    t = 0.0
    p1, u1, r1 = hamiltonian_batch(problem, t, x1, z1)
    p2, u2, r2 = hamiltonian_batch(problem, t, x1, z2)
    pm, _, _ = hamiltonian_batch(problem, t, x1, 0.5 * (z1 + z2))
    px, _, _ = hamiltonian_batch(problem, t, x2, z1)
    dz = np.linalg.norm(z1 - z2, axis=1)
    z_ratio = np.abs(p1 - p2) / ((1 + np.linalg.norm(z1, axis=1) + np.linalg.norm(z2, axis=1)) * dz)
    dx = np.linalg.norm(x1 - x2, axis=1)
    x_ratio = np.abs(p1 - px) / dx
    slack = pm - 0.5 * (p1 + p2)
    ball = np.concatenate([np.linalg.norm(u1, axis=1) - r1, np.linalg.norm(u2, axis=1) - r2])
    feasible = bool(problem.admissible.contains(u1).all() and problem.admissible.contains(u2).all())
    return {
        "samples": n,
        "z_constant": float(np.max(z_ratio)),
        "z_constant_declared": problem.L_psi,
        "x_constant": float(np.max(x_ratio)),
        "x_constant_declared": problem.cost.lipschitz_x,
        "concavity_min_slack": float(np.min(slack)),
        "concavity_violations": int(np.sum(slack < -1e-9)),
        "ball_violations": int(np.sum(ball > 1e-12)),
        "feasible": feasible,
        "passed": bool(
            np.all(np.isfinite(z_ratio))
            and np.max(z_ratio) <= problem.L_psi * (1 + 1e-9)
            and np.max(x_ratio) <= problem.cost.lipschitz_x * (1 + 1e-9) + 1e-12
            and np.all(slack >= -1e-9)
            and np.all(ball <= 1e-12)
            and feasible
        ),
    }


# ---------------------------------------------------------------------------
# controlled dynamics and costs


@dataclass
class CostEstimate:
    mean: float
    se: float
    paths: int

    def to_dict(self) -> dict[str, Any]:
        return dict(vars(self))


@dataclass(eq=False)
class ControlledRun:
    cost: CostEstimate
    max_abs_control: float
    states: np.ndarray | None = None
    controls: np.ndarray | None = None


def _controlled(problem, spec, grid, x0, policy, paths, seed, antithetic, keep):
    """Exponential-Euler with the action held constant on each step.

    The running cost of a piecewise-constant action is integrated exactly
    by the left-point sum.
    """
    d, k, dt = spec.dim, problem.action_dim, grid.dt
    dw = brownian_increments(seed, paths, grid.steps, d, dt, antithetic)
    decay = np.exp(spec.a_eigenvalues * dt)
    x = np.broadcast_to(np.asarray(x0, dtype=float), (paths, d)).copy()
    running = np.zeros(paths)
    max_u = 0.0
    states = np.empty((paths, grid.steps + 1, d)) if keep else None
    controls = np.empty((paths, grid.steps, k)) if keep else None
    if keep:
        states[:, 0] = x
    for i in range(grid.steps):
        t = grid.node(i)
        u = policy(i, t, x)
        if not problem.admissible.contains(u).all():
            raise ControlError(f"feedback selector returned an inadmissible action at step {i}")
        max_u = max(max_u, float(np.max(np.abs(u))) if u.size else 0.0)
        running += problem.cost(t, x, u) * dt
        x = decay * (x + (spec.drift(t, x) + problem.action(u)) * dt) + spec.diffusion.sigma(t) * dw[:, i]
        if not np.all(np.isfinite(x)):
            raise ControlError(f"non-finite controlled state at step {i + 1}")
        if keep:
            states[:, i + 1] = x
            controls[:, i] = u
    total = running + problem.terminal(x)
    draws = 0.5 * (total[0::2] + total[1::2]) if antithetic else total
    est = CostEstimate(float(total.mean()), float(np.std(draws, ddof=1) / math.sqrt(draws.shape[0])), paths)
    return ControlledRun(est, max_u, states, controls)


def closed_loop(
    problem: ControlProblem,
    spec: GalerkinSpec,
    grid: TimeGrid,
    x0,
    source: BsdeSolution | Callable[[int, float, np.ndarray], np.ndarray],
    paths: int,
    seed: int,
    antithetic: bool = False,
    keep_paths: bool = False,
) -> ControlledRun:
    """Simulate the feedback ``u = gamma(t, x, Z(t, x))`` and estimate its cost.

    ``source`` supplies ``Z = grad v . G``; a BSDE solution on the same grid
    serves its regression surrogate.
    """
    if isinstance(source, BsdeSolution):
        if source.grid != grid:
            raise ModelError("BSDE solution lives on a different grid")
        sol = source
        source = lambda i, t, x: sol.z_surface(i, x)  # noqa: E731

    def policy(i, t, x):
        return hamiltonian_batch(problem, t, x, source(i, t, x))[1]

    return _controlled(problem, spec, grid, x0, policy, paths, seed, antithetic, keep_paths)


def constant_control_cost(problem, spec, grid, x0, u, paths, seed, antithetic=False) -> CostEstimate:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if not problem.admissible.contains(u[None]).all():
        raise ControlError("constant control is not admissible")
    fixed = np.broadcast_to(u, (paths, u.size))
    return _controlled(problem, spec, grid, x0, lambda i, t, x: fixed, paths, seed, antithetic, False).cost


def fundamental_relation_check(
    value: float,
    value_se: float,
    feedback: CostEstimate,
    adversarial: Sequence[tuple[Any, CostEstimate]],
    bias_budget: float = 0.0,
    rel_tol: float | None = None,
) -> dict[str, Any]:
    """``v <= J(u) + 3 SE`` over the adversarial family and ``J(feedback) ~ v``."""
    violations = [
        {"control": np.asarray(u).tolist(), "J": c.mean, "se": c.se}
        for u, c in adversarial
        if value > c.mean + 3.0 * c.se
    ]
    gap = abs(feedback.mean - value)
    tol = 3.0 * (math.hypot(feedback.se, value_se) + bias_budget)
    rel = gap / abs(value) if value != 0 else (0.0 if gap == 0 else math.inf)
    ok_gap = gap <= tol if rel_tol is None else rel < rel_tol
    return {
        "v": value,
        "J_feedback": feedback.mean,
        "J_feedback_se": feedback.se,
        "J_adversarial_min": min((c.mean for _, c in adversarial), default=None),
        "violations": violations,
        "gap": gap,
        "relative_gap": rel,
        "gap_tolerance": tol if rel_tol is None else rel_tol,
        "passed": bool(ok_gap and not violations),
    }
