"""Independent reference values used to check the solvers.

Nothing here touches the regression solver or the Bismut weights: each
oracle is a closed form, an ODE solve, or a plain Monte Carlo average.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.integrate import solve_ivp

from .forward import simulate


def cole_hopf_value(terminal_values: np.ndarray, gamma: float = 1.0) -> float:
    """``(1/gamma) log E exp(gamma phi(X_T))`` -- value of the BSDE with
    generator ``(gamma/2)|z|^2``."""
    a = gamma * np.asarray(terminal_values, dtype=float)
    shift = a.max()
    return float((shift + math.log(np.mean(np.exp(a - shift)))) / gamma)


def _pairs(v: np.ndarray, antithetic: bool) -> np.ndarray:
    return 0.5 * (v[0::2] + v[1::2]) if antithetic else v


def cole_hopf_fd_gradient(spec, grid, x0, h, terminal, gamma, paths, seed, antithetic=True, eps=1e-3):
    """Central finite difference of the Cole-Hopf value with common random numbers.

    Returns ``(estimate, se)``; the standard error is the delta-method error
    of the ratio ``E[a]/E[b]`` with ``a`` the differenced exponentials.
    """
    x0 = np.asarray(x0, dtype=float)
    h = np.asarray(h, dtype=float)
    up = simulate(spec, grid, x0 + eps * h, paths, seed, antithetic)
    down = simulate(spec, grid, x0 - eps * h, paths, seed, antithetic)
    eu = np.exp(gamma * terminal(up.terminal))
    ed = np.exp(gamma * terminal(down.terminal))
    est = (math.log(eu.mean()) - math.log(ed.mean())) / (2 * eps * gamma)
    a = (eu - ed) / (2 * eps * gamma)
    b = 0.5 * (eu + ed)
    ratio = a.mean() / b.mean()
    r = _pairs(a - ratio * b, antithetic)
    se = float(np.std(r, ddof=1) / math.sqrt(r.shape[0]) / b.mean())
    return float(est), se


def riccati_lq(horizon: float, x0: float, control_weight=1.0, terminal_weight=1.0, sigma=1.0, tol=1e-12):
    """Value of ``min E[int q u^2 dt + s X_T^2]`` for ``dX = u dt + sigma dW``.

    ``v(t, x) = p(t) x^2 + r(t)`` with ``p' = p^2/q``, ``r' = -sigma^2 p``;
    solved numerically backwards in time.  Returns ``(v, p(0), sol)``.
    """

    def rhs(tau, y):
        p, _ = y
        # tau = T - t
        return [-(p**2) / control_weight, sigma**2 * p]

    sol = solve_ivp(rhs, (0.0, horizon), [terminal_weight, 0.0], rtol=tol, atol=tol * 1e-2, dense_output=True)
    p, r = sol.y[:, -1]
    return float(p * x0**2 + r), float(p), sol


def riccati_lq_closed_form(horizon, x0, control_weight=1.0, terminal_weight=1.0, sigma=1.0):
    q, s = control_weight, terminal_weight
    p = 1.0 / (1.0 / s + horizon / q)
    r = sigma**2 * q * math.log(1.0 + s * horizon / q)
    return p * x0**2 + r


def ito_isometry_ou(elapsed: np.ndarray, rate: float = 1.0) -> np.ndarray:
    """``E U_s^2`` for the scalar OU flow ``e^{-rate r}`` with unit noise."""
    s = np.asarray(elapsed, dtype=float)
    return (1.0 - np.exp(-2.0 * rate * s)) / (2.0 * rate * s**2)


def heat_mode_energy(amplitude: float, mode: int, horizon: float) -> float:
    """Squared mean of mode ``k`` of the unforced heat equation started at
    ``amplitude * sin(k pi xi)``: ``(amplitude^2 / 2) e^{-2 k^2 pi^2 T}``."""
    return 0.5 * amplitude**2 * math.exp(-2.0 * mode**2 * math.pi**2 * horizon)


def plain_mc_mean(spec, grid, x0, func, paths, seed, antithetic=False):
    """Fresh-seed ``E func(X_T)`` with standard error."""
    b = simulate(spec, grid, x0, paths, seed, antithetic)
    v = func(b.terminal)
    r = _pairs(v, antithetic)
    return float(v.mean()), float(np.std(r, ddof=1) / math.sqrt(r.shape[0]))


def ito_isometry_discrete(factor: float, dt: float, steps: int) -> float:
    """``E U_N^2`` when the flow is ``factor^{j+1}`` on step ``j`` (unit noise).

    Scalar scheme ``D_{j+1} = factor D_j``; the weight is the discrete Ito
    integral, so ``E U_N^2 = sum_j factor^{2(j+1)} dt / (N dt)^2``.
    """
    j = np.arange(steps)
    return float(np.sum(factor ** (2 * (j + 1))) * dt / (steps * dt) ** 2)
