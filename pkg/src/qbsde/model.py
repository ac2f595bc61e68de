"""Finite Galerkin truncation of the forward dynamics.

The state space is represented by ``dim`` eigenmodes of a diagonal operator
``A``.  Drift and diffusion come from small catalogs; every catalog entry
ships an analytic Jacobian and a declared Lipschitz/bound constant, because
the a-priori estimates checked downstream are stated in terms of them.

Arrays holding states have the mode index on the last axis, so every map
here accepts a single vector ``(d,)`` or a batch ``(..., d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

QUADRATURE_NODES = 257


class ModelError(ValueError):
    """Raised for malformed or hypothesis-violating model declarations."""


# ---------------------------------------------------------------------------
# quadrature on (0, 1) with the Dirichlet sine basis


def simpson_weights(n_nodes: int = QUADRATURE_NODES) -> np.ndarray:
    """Composite Simpson weights on ``n_nodes`` equispaced points of [0, 1]."""
    if n_nodes < 3 or n_nodes % 2 == 0:
        raise ModelError("Simpson's rule needs an odd number of nodes >= 3")
    h = 1.0 / (n_nodes - 1)
    w = np.ones(n_nodes)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * h / 3.0


def sine_basis(dim: int, n_nodes: int = QUADRATURE_NODES) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and the ``(n_nodes, dim)`` matrix of e_k(xi) = sqrt(2) sin(k pi xi)."""
    xi = np.linspace(0.0, 1.0, n_nodes)
    k = np.arange(1, dim + 1)
    return xi, math.sqrt(2.0) * np.sin(np.pi * np.outer(xi, k))


def dirichlet_eigenvalues(dim: int) -> np.ndarray:
    k = np.arange(1, dim + 1, dtype=float)
    return -(k**2) * np.pi**2


# ---------------------------------------------------------------------------
# drift catalog


class Drift:
    """Base class of the drift catalog: ``F(t, x)`` with analytic Jacobian."""

    kind = "abstract"
    lipschitz: float = 0.0

    def __call__(self, t: float, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jvp(self, t: float, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Jacobian of ``F(t, .)`` at ``x`` applied to ``v``."""
        raise NotImplementedError

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "params": {}}


class ZeroDrift(Drift):
    kind = "zero"

    def __init__(self, dim: int):
        self.dim = dim
        self.lipschitz = 0.0

    def __call__(self, t, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def jvp(self, t, x, v):
        return np.zeros_like(np.asarray(v, dtype=float))


class LinearDrift(Drift):
    kind = "linear"

    def __init__(self, matrix):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        if self.matrix.shape[0] != self.matrix.shape[1]:
            raise ModelError("linear drift matrix must be square")
        self.dim = self.matrix.shape[0]
        self.lipschitz = float(np.linalg.norm(self.matrix, 2))

    def __call__(self, t, x):
        return np.asarray(x, dtype=float) @ self.matrix.T

    def jvp(self, t, x, v):
        return np.asarray(v, dtype=float) @ self.matrix.T

    def to_dict(self):
        return {"kind": self.kind, "params": {"matrix": self.matrix.tolist()}}


class TanhDrift(Drift):
    """``F(x) = scale * tanh(L x)`` componentwise; Lipschitz ``scale * |L|``."""

    kind = "tanh-saturated"

    def __init__(self, matrix, scale: float = 1.0):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
        if self.matrix.shape[0] != self.matrix.shape[1]:
            raise ModelError("tanh drift matrix must be square")
        self.dim = self.matrix.shape[0]
        self.scale = float(scale)
        self.lipschitz = abs(self.scale) * float(np.linalg.norm(self.matrix, 2))

    def __call__(self, t, x):
        return self.scale * np.tanh(np.asarray(x, dtype=float) @ self.matrix.T)

    def jvp(self, t, x, v):
        th = np.tanh(np.asarray(x, dtype=float) @ self.matrix.T)
        return self.scale * (1.0 - th**2) * (np.asarray(v, dtype=float) @ self.matrix.T)

    def to_dict(self):
        return {
            "kind": self.kind,
            "params": {"matrix": self.matrix.tolist(), "scale": self.scale},
        }


@dataclass(frozen=True)
class Reaction:
    """Scalar reaction term f(y) of the heat model with |f'| <= c1."""

    kind: str = "zero"
    amp: float = 0.0

    def __post_init__(self):
        if self.kind not in ("zero", "linear", "tanh"):
            raise ModelError(f"unknown reaction kind {self.kind!r}")

    @property
    def c1(self) -> float:
        return 0.0 if self.kind == "zero" else abs(self.amp)

    def value(self, y):
        if self.kind == "zero":
            return np.zeros_like(y)
        if self.kind == "linear":
            return self.amp * y
        return self.amp * np.tanh(y)

    def derivative(self, y):
        if self.kind == "zero":
            return np.zeros_like(y)
        if self.kind == "linear":
            return np.full_like(y, self.amp)
        return self.amp * (1.0 - np.tanh(y) ** 2)


class HeatNemytskiiDrift(Drift):
    """Sine-mode projection of the Nemytskii map ``x(xi) -> f(x(xi))``.

    Projection uses composite Simpson quadrature; the sine modes are exactly
    orthonormal under it for ``dim`` well below the node count, so the
    Lipschitz constant of the projected map is ``sup |f'|``.
    """

    kind = "heat-nemytskii"

    def __init__(self, dim: int, reaction: Reaction, n_nodes: int = QUADRATURE_NODES):
        self.dim = dim
        self.reaction = reaction
        self.n_nodes = n_nodes
        self.xi, self.basis = sine_basis(dim, n_nodes)
        self.weights = simpson_weights(n_nodes)
        self._wb = self.weights[:, None] * self.basis
        self.lipschitz = reaction.c1

    def profile(self, x):
        return np.asarray(x, dtype=float) @ self.basis.T

    def __call__(self, t, x):
        if self.reaction.kind == "zero":
            return np.zeros_like(np.asarray(x, dtype=float))
        return self.reaction.value(self.profile(x)) @ self._wb

    def jvp(self, t, x, v):
        if self.reaction.kind == "zero":
            return np.zeros_like(np.asarray(v, dtype=float))
        slope = self.reaction.derivative(self.profile(x))
        return (slope * self.profile(v)) @ self._wb

    def to_dict(self):
        return {
            "kind": self.kind,
            "params": {"reaction": self.reaction.kind, "amp": self.reaction.amp},
        }


def make_drift(kind: str, params: Mapping[str, Any] | None, dim: int) -> Drift:
    params = dict(params or {})
    if kind == "zero":
        return ZeroDrift(dim)
    if kind == "linear":
        drift = LinearDrift(params["matrix"])
    elif kind == "tanh-saturated":
        drift = TanhDrift(params.get("matrix", np.eye(dim)), params.get("scale", 1.0))
    elif kind == "heat-nemytskii":
        reaction = Reaction(params.get("reaction", "zero"), float(params.get("amp", 0.0)))
        drift = HeatNemytskiiDrift(dim, reaction)
    else:
        raise ModelError(f"unknown drift kind {kind!r}")
    if drift.dim != dim:
        raise ModelError(f"drift acts on dimension {drift.dim}, model has {dim}")
    return drift


# ---------------------------------------------------------------------------
# diffusion catalog (diagonal, x-independent)


class Diffusion:
    """Diagonal ``G(t) = diag(sigma_k(t))`` with declared bounds.

    ``bound`` is sup |G| and ``inverse_bound`` is sup |G^{-1}|.
    """

    kind = "abstract"

    def sigma(self, t: float) -> np.ndarray:
        raise NotImplementedError

    def inverse(self, t: float) -> np.ndarray:
        return 1.0 / self.sigma(t)

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError


class ConstantDiffusion(Diffusion):
    kind = "constant"

    def __init__(self, sigma, dim: int):
        s = np.broadcast_to(np.asarray(sigma, dtype=float), (dim,)).copy()
        s.setflags(write=False)
        self._sigma = s
        self.dim = dim
        self.bound = float(np.max(np.abs(s)))
        low = float(np.min(np.abs(s)))
        self.inverse_bound = math.inf if low == 0.0 else 1.0 / low

    def sigma(self, t):
        return self._sigma

    def to_dict(self):
        return {"kind": self.kind, "params": {"sigma": self._sigma.tolist()}}


class ModulatedDiffusion(Diffusion):
    """``sigma_k(t) = s_k * (1 + amp * sin(2 pi freq t))``."""

    kind = "modulated"

    def __init__(self, sigma, dim: int, amp: float = 0.0, freq: float = 1.0):
        self.base = np.broadcast_to(np.asarray(sigma, dtype=float), (dim,)).copy()
        self.amp = float(amp)
        self.freq = float(freq)
        self.dim = dim
        self.bound = float(np.max(np.abs(self.base))) * (1.0 + abs(self.amp))
        low = float(np.min(np.abs(self.base))) * (1.0 - abs(self.amp))
        self.inverse_bound = math.inf if low <= 0.0 else 1.0 / low

    def sigma(self, t):
        return self.base * (1.0 + self.amp * math.sin(2.0 * math.pi * self.freq * t))

    def to_dict(self):
        return {
            "kind": self.kind,
            "params": {"sigma": self.base.tolist(), "amp": self.amp, "freq": self.freq},
        }


def make_diffusion(kind: str, params: Mapping[str, Any] | None, dim: int) -> Diffusion:
    params = dict(params or {})
    sigma = params.get("sigma", 1.0)
    if kind == "constant":
        return ConstantDiffusion(sigma, dim)
    if kind == "modulated":
        return ModulatedDiffusion(sigma, dim, params.get("amp", 0.0), params.get("freq", 1.0))
    raise ModelError(f"unknown diffusion kind {kind!r}")


# ---------------------------------------------------------------------------
# model and grid


@dataclass(frozen=True, eq=False)
class GalerkinSpec:
    """Diagonal-operator truncation of the forward equation.

    ``gamma`` is the smoothing exponent of the Hilbert-Schmidt condition on
    ``e^{sA}G``; it is kept as metadata only, every norm being finite here.
    """

    dim: int
    a_eigenvalues: np.ndarray
    drift: Drift
    diffusion: Diffusion
    horizon: float
    gamma: float = 0.0

    def __post_init__(self):
        if int(self.dim) <= 0:
            raise ModelError("dim must be positive")
        if not self.horizon > 0:
            raise ModelError("horizon must be positive")
        a = np.asarray(self.a_eigenvalues, dtype=float).copy()
        if a.shape != (self.dim,):
            raise ModelError(f"expected {self.dim} eigenvalues, got shape {a.shape}")
        a.setflags(write=False)
        object.__setattr__(self, "a_eigenvalues", a)
        if getattr(self.drift, "dim", self.dim) != self.dim:
            raise ModelError("drift dimension mismatch")
        if getattr(self.diffusion, "dim", self.dim) != self.dim:
            raise ModelError("diffusion dimension mismatch")

    @property
    def lipschitz_f(self) -> float:
        return self.drift.lipschitz

    @property
    def g_bound(self) -> float:
        return self.diffusion.bound

    @property
    def g_inverse_bound(self) -> float:
        return self.diffusion.inverse_bound

    def to_dict(self) -> dict[str, Any]:
        return {
            "dim": self.dim,
            "eigenvalues": self.a_eigenvalues.tolist(),
            "drift": self.drift.to_dict(),
            "diffusion": self.diffusion.to_dict(),
            "horizon": self.horizon,
        }


def spec_from_dict(cfg: Mapping[str, Any]) -> GalerkinSpec:
    """Build a spec from the ``[model]`` config table."""
    try:
        dim = int(cfg["dim"])
        horizon = float(cfg["horizon"])
    except KeyError as exc:
        raise ModelError(f"model config missing field {exc.args[0]!r}") from None
    if dim <= 0:
        raise ModelError("dim must be positive")
    eig = cfg.get("eigenvalues", "zero")
    if eig == "dirichlet":
        eigenvalues = dirichlet_eigenvalues(dim)
    elif eig == "zero":
        eigenvalues = np.zeros(dim)
    else:
        eigenvalues = np.asarray(eig, dtype=float)
    drift_cfg = cfg.get("drift", {"kind": "zero"})
    diff_cfg = cfg.get("diffusion", {"kind": "constant"})
    return GalerkinSpec(
        dim=dim,
        a_eigenvalues=eigenvalues,
        drift=make_drift(drift_cfg.get("kind", "zero"), drift_cfg.get("params"), dim),
        diffusion=make_diffusion(diff_cfg.get("kind", "constant"), diff_cfg.get("params"), dim),
        horizon=horizon,
        gamma=float(cfg.get("gamma", 0.0)),
    )


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [t0, t1].  ``t0 == t1`` is the degenerate one-node grid."""

    t0: float
    t1: float
    steps: int

    def __post_init__(self):
        if self.t1 < self.t0:
            raise ModelError("grid end precedes grid start")
        if self.t1 == self.t0:
            object.__setattr__(self, "steps", 0)
        elif int(self.steps) < 1:
            raise ModelError("steps must be positive")
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "t1", float(self.t1))
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def dt(self) -> float:
        return 0.0 if self.steps == 0 else (self.t1 - self.t0) / self.steps

    @property
    def nodes(self) -> np.ndarray:
        if self.steps == 0:
            return np.array([self.t0])
        return self.t0 + self.dt * np.arange(self.steps + 1)

    def node(self, i: int) -> float:
        return self.t1 if i == self.steps else self.t0 + i * self.dt

    def sub(self, start: int) -> "TimeGrid":
        """The tail grid starting at node ``start`` with the same spacing."""
        return TimeGrid(self.node(start), self.t1, self.steps - start)


def semigroup_apply(spec: GalerkinSpec, dt: float, v) -> np.ndarray:
    """``e^{dt A} v`` in the eigenbasis."""
    if dt < 0:
        raise ModelError("semigroup time must be non-negative")
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != spec.dim:
        raise ModelError(f"vector has {v.shape[-1]} modes, model has {spec.dim}")
    return np.exp(spec.a_eigenvalues * dt) * v


# ---------------------------------------------------------------------------
# hypothesis validation


@dataclass
class HypothesisCheck:
    name: str
    declared: float
    measured: float
    passed: bool


@dataclass
class ValidationReport:
    checks: list[HypothesisCheck] = field(default_factory=list)
    sample_count: int = 0
    seed: int = 0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> HypothesisCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "sample_count": self.sample_count,
            "seed": self.seed,
            "checks": [vars(c) for c in self.checks],
        }


def _within(measured: float, declared: float, rel: float = 1e-9) -> bool:
    return measured <= declared * (1.0 + rel) + 1e-300


def validate_spec(spec: GalerkinSpec, sample_count: int = 1000, seed: int = 0) -> ValidationReport:
    """Empirically check the declared Lipschitz and diffusion bounds."""
    if sample_count < 1:
        raise ModelError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    d = spec.dim
    times = np.sort(rng.uniform(0.0, spec.horizon, size=sample_count))
    times = np.concatenate(([0.0], times, [spec.horizon]))

    sig = np.array([spec.diffusion.sigma(t) for t in times])
    bad = (sig == 0.0).any(axis=0) | (np.diff(np.sign(sig), axis=0) != 0).any(axis=0)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise ModelError(f"diffusion mode {k} vanishes or changes sign on [0, T]")

    # mixture of scales, plus close pairs to probe local slopes
    scale = np.exp(rng.uniform(np.log(0.05), np.log(20.0), size=(sample_count, 1)))
    x = rng.standard_normal((sample_count, d)) * scale
    far = rng.standard_normal((sample_count, d)) * scale
    near = x + 1e-4 * rng.standard_normal((sample_count, d))
    y = np.where(rng.random((sample_count, 1)) < 0.5, far, near)
    ts = rng.uniform(0.0, spec.horizon, size=sample_count)
    ratios = np.empty(sample_count)
    for m in range(sample_count):
        diff = np.linalg.norm(x[m] - y[m])
        num = np.linalg.norm(spec.drift(ts[m], x[m]) - spec.drift(ts[m], y[m]))
        ratios[m] = 0.0 if diff == 0 else num / diff
    lip = float(ratios.max())

    g_norm = float(np.max(np.abs(sig)))
    g_inv = float(np.max(1.0 / np.abs(sig)))
    report = ValidationReport(sample_count=sample_count, seed=seed)
    report.checks.append(HypothesisCheck("lipschitz_F", spec.lipschitz_f, lip, _within(lip, spec.lipschitz_f)))
    report.checks.append(HypothesisCheck("bounded_G", spec.g_bound, g_norm, _within(g_norm, spec.g_bound)))
    report.checks.append(
        HypothesisCheck("invertible_G", spec.g_inverse_bound, g_inv, _within(g_inv, spec.g_inverse_bound))
    )
    return report
