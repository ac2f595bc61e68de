"""Experiment runners behind the CLI subcommands.

Each runner takes a normalised config and returns ``(summary, failures)``;
artifacts go to the output directory.  Numeric content depends only on the
config and the seed.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .. import bismut as bm
from .. import bsde as bs
from .. import control as ct
from .. import heat as ht
from .. import smoothing as sm
from ..forward import dump_bundle, simulate, variational, write_summary_csv
from ..model import GalerkinSpec, TimeGrid, spec_from_dict, validate_spec
from .report import write_table

Failures = list[dict[str, Any]]


# ---------------------------------------------------------------------------
# builders


def build_spec(cfg) -> GalerkinSpec:
    return spec_from_dict(cfg["model"])


def build_grid(cfg) -> TimeGrid:
    return TimeGrid(float(cfg["grid"]["t0"]), float(cfg["model"]["horizon"]), int(cfg["grid"]["steps"]))


def build_x0(cfg, dim: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(cfg["grid"]["x0"], dtype=float), (dim,)).copy()


def build_terminal(cfg, dim: int) -> bs.TerminalSpec:
    return bs.make_terminal(cfg["terminal"]["kind"], cfg["terminal"].get("params"), dim)


def build_problem(cfg, spec: GalerkinSpec, terminal: bs.TerminalSpec) -> ct.ControlProblem:
    c = cfg.get("control", {})
    cost = c.get("cost", {})
    action = c.get("action", {})
    adm = c.get("admissible", {})
    matrix = action.get("matrix", np.eye(spec.dim).tolist())
    return ct.ControlProblem(
        ct.RunningCost(
            float(cost.get("control_weight", 1.0)),
            float(cost.get("state_weight", 0.0)),
            float(cost.get("state_scale", 1.0)),
        ),
        ct.ActionMap(action.get("kind", "linear"), matrix),
        ct.AdmissibleSet(adm.get("kind", "all"), adm.get("lo"), adm.get("hi"), adm.get("points")),
        terminal,
        spec.diffusion,
    )


def build_driver(cfg, spec: GalerkinSpec, terminal: bs.TerminalSpec) -> bs.DriverSpec:
    kind = cfg["driver"]["kind"]
    if kind == "hamiltonian":
        return ct.hamiltonian_driver(build_problem(cfg, spec, terminal))
    return bs.make_driver(kind, cfg["driver"].get("params"))


def _solve(cfg, spec, grid, bundle, driver, terminal) -> bs.BsdeSolution:
    b = cfg["bsde"]
    return bs.solve(
        spec,
        grid,
        bundle,
        driver,
        terminal,
        basis_degree=int(b["basis_degree"]),
        picard_iters=int(b["picard_iters"]),
        clip_multiplier=float(b["clip_multiplier"]),
    )


def bound_failures(sol: bs.BsdeSolution, label: str, max_rate: float = 0.01) -> Failures:
    """The a-priori bound on ``|Y|`` and the clip-activation budget."""
    out = []
    s = sol.summary()
    if s["max_abs_Y"] > s["bound_Y"] * (1 + 1e-12):
        out.append({"check": f"{label}: |Y| bound", "max_abs_Y": s["max_abs_Y"], "bound_Y": s["bound_Y"]})
    for key in ("y_clip_rate", "z_clip_rate"):
        if s[key] >= max_rate:
            out.append({"check": f"{label}: {key}", "rate": s[key]})
    return out


# ---------------------------------------------------------------------------
# mild-form residual


def mild_residual(
    spec: GalerkinSpec,
    sol: bs.BsdeSolution,
    points: Sequence[tuple[float, Sequence[float]]],
    paths: int,
    seed: int,
    budget: float = 0.0,
    antithetic: bool = True,
) -> list[dict[str, Any]]:
    """Gap between the regression value and its variation-of-constants form.

    For each ``(t, x)`` (``t`` a grid node) the right-hand side
    ``E phi(X_T) + E sum_j psi(s_j, X_j, v(s_j, X_j), Z(s_j, X_j)) dt``
    is averaged over fresh paths started at ``(t, x)``.  The time sum is the
    left-point rule of the backward scheme.  Tolerance is
    ``3 (SE + budget sqrt(dt))``.
    """
    grid = sol.grid
    rows = []
    for k, (t, x) in enumerate(points):
        i = int(round((t - grid.t0) / grid.dt)) if grid.steps else 0
        if not math.isclose(grid.node(i), t, rel_tol=0, abs_tol=1e-12) or not 0 <= i < grid.steps:
            raise ValueError(f"t={t} is not an interior grid node")
        x = np.broadcast_to(np.asarray(x, dtype=float), (spec.dim,)).copy()
        v = float(sol.surface(i, x[None])[0][0])
        v_se = float(sol.value_se(i, x[None])[0])
        sub = grid.sub(i)
        b = simulate(spec, sub, x, paths, seed + 1 + k, antithetic)
        acc = sol.terminal(b.terminal)
        for j in range(sub.steps):
            xs = b.states[:, j, :]
            vj, zj = sol.surface(i + j, xs)
            acc = acc + sol.driver(sub.node(j), xs, vj, zj) * sub.dt
        mean, se = b.mean_and_se(acc)
        se_total = math.hypot(se, v_se)
        tol = 3.0 * (se_total + budget * math.sqrt(grid.dt))
        rows.append(
            {"t": float(t), "x": x.tolist(), "v": v, "mild": mean, "residual": abs(v - mean), "se": se_total, "tolerance": tol, "passed": abs(v - mean) < tol}
        )
    return rows


# ---------------------------------------------------------------------------
# runners


def run_validate(cfg, seed: int, out: Path, threads: int = 1):
    spec = build_spec(cfg)
    terminal = build_terminal(cfg, spec.dim)
    driver = build_driver(cfg, spec, terminal)
    rep = validate_spec(spec, seed=seed)
    drv = bs.validate_driver(driver, spec.dim, spec.horizon, samples=500, seed=seed)
    summary: dict[str, Any] = {"model": rep.to_dict(), "driver": drv}
    failures: Failures = []
    if not rep.passed:
        failures += [{"check": c["name"], **c} for c in rep.to_dict()["checks"] if not c["passed"]]
    if not drv["passed"]:
        failures.append({"check": "driver constants", **drv})
    if "control" in cfg:
        prob = build_problem(cfg, spec, terminal)
        summary["control"] = prob.validate(seed=seed)
        reg = ct.hamiltonian_regularity_check(prob, 2000, seed)
        summary["hamiltonian"] = reg
        if not reg["passed"]:
            failures.append({"check": "hamiltonian regularity", **reg})
    return summary, failures


def run_forward(cfg, seed: int, out: Path, threads: int = 1):
    spec, grid = build_spec(cfg), build_grid(cfg)
    x0 = build_x0(cfg, spec.dim)
    mc = cfg["mc"]
    bundle = simulate(spec, grid, x0, mc["paths"], seed, mc["antithetic"], threads)
    summary: dict[str, Any] = {"moments": bundle.moment_report()}
    term = bundle.terminal
    summary["terminal_mean"] = term.mean(axis=0).tolist()
    summary["terminal_var"] = term.var(axis=0).tolist()
    direction = cfg.get("bismut", {}).get("direction")
    if direction is not None:
        bundle = variational(spec, bundle, direction, threads)
        bound = math.exp(spec.lipschitz_f * (grid.t1 - grid.t0))
        summary["flow_bound"] = bundle.flow_bound
        summary["gronwall_bound"] = bound
    write_summary_csv(bundle, out / "forward_summary.csv")
    if cfg.get("output", {}).get("dump_paths"):
        dump_bundle(bundle, out / "paths.bin")
    failures: Failures = []
    if direction is not None and summary["flow_bound"] > summary["gronwall_bound"] * (1 + 1e-6):
        failures.append({"check": "flow Gronwall bound", "flow_bound": summary["flow_bound"]})
    return summary, failures


def run_bsde(cfg, seed: int, out: Path, threads: int = 1):
    spec, grid = build_spec(cfg), build_grid(cfg)
    x0 = build_x0(cfg, spec.dim)
    terminal = build_terminal(cfg, spec.dim)
    driver = build_driver(cfg, spec, terminal)
    mc = cfg["mc"]
    bundle = simulate(spec, grid, x0, mc["paths"], seed, mc["antithetic"], threads)
    sol = _solve(cfg, spec, grid, bundle, driver, terminal)
    sol.write_csv(out / "bsde.csv")
    summary: dict[str, Any] = {"bsde": sol.summary(), "mp_norm_2": bs.mp_norm(sol, 2.0)}
    failures = bound_failures(sol, "bsde")
    mild = cfg.get("mild")
    if mild:
        rows = mild_residual(
            spec, sol, [(p[0], p[1:]) for p in mild["points"]], int(mild.get("paths", mc["paths"])), seed, float(mild.get("budget", 0.0)), mc["antithetic"]
        )
        summary["mild_residual"] = rows
        write_table(out / "mild_residual.csv", ["t", "v", "mild", "residual", "tolerance"], [[r["t"], r["v"], r["mild"], r["residual"], r["tolerance"]] for r in rows])
        failures += [{"check": "mild residual", **r} for r in rows if not r["passed"]]
    return summary, failures


def run_bismut(cfg, seed: int, out: Path, threads: int = 1):
    spec, grid = build_spec(cfg), build_grid(cfg)
    x0 = build_x0(cfg, spec.dim)
    terminal = build_terminal(cfg, spec.dim)
    driver = build_driver(cfg, spec, terminal)
    mc = cfg["mc"]
    bcfg = cfg.get("bismut", {})
    h = np.broadcast_to(np.asarray(bcfg.get("direction", 1.0), dtype=float), (spec.dim,))
    bundle = variational(spec, simulate(spec, grid, x0, mc["paths"], seed, mc["antithetic"], threads), h, threads)
    weights = bm.compute_weights(bundle, spec)
    lin = bm.linear_gradient(terminal, bundle, weights)
    summary: dict[str, Any] = {"linear_gradient": lin.to_dict()}
    failures: Failures = []
    if driver.kind != "zero":
        sol = _solve(cfg, spec, grid, bundle, driver, terminal)
        nl = bm.nonlinear_gradient(driver, terminal, sol, bundle, weights)
        summary["nonlinear_gradient"] = nl.to_dict()
        summary["bsde"] = sol.summary()
        summary["z0_dot_direction"] = float(sol.z0 @ (h * spec.diffusion.inverse(grid.t0)))
        failures += bound_failures(sol, "bismut")
    reports = []
    for q in bcfg.get("q", [1, 2, 4]):
        rep = bm.u_moment_report(weights, float(q))
        reports.append(rep.to_dict())
        rep.write_csv(out / f"u_moments_q{float(q):g}.csv")
    summary["u_moments"] = reports
    return summary, failures


def _catalog_grid(kind: str, params, lo, hi, resolution) -> sm.GriddedFunction:
    phi = bs.make_terminal(kind, params, 1)
    return sm.GriddedFunction.sample(lambda p: phi(p), lo, hi, resolution)


def run_smooth(cfg, seed: int, out: Path, threads: int = 1):
    s = cfg.get("smooth", {})
    levels = [float(n) for n in s.get("levels", [2, 8, 32, 128])]
    lo, hi, res = float(s.get("lo", -3.0)), float(s.get("hi", 3.0)), int(s.get("resolution", 1201))
    term = cfg["terminal"]
    phi = _catalog_grid(term["kind"], term.get("params"), lo, hi, res)
    lip = float(phi.slopes().max())
    rows, failures = [], []
    for n in levels:
        phi_n = sm.inf_sup_terminal(phi, n, s.get("method", "envelope"))
        rows.append([n, phi_n.sup_distance, phi_n.lipschitz, float(phi_n.values.min()), float(phi_n.values.max())])
        if phi_n.lipschitz > lip + 1e-9:
            failures.append({"check": "Lipschitz non-expansion", "n": n, "lipschitz": phi_n.lipschitz, "reference": lip})
        if phi_n.values.min() < phi.values.min() or phi_n.values.max() > phi.values.max():
            failures.append({"check": "bounds", "n": n})
    dist = [r[1] for r in rows]
    if any(b > a for a, b in zip(dist, dist[1:])):
        failures.append({"check": "sup distance non-increasing", "distances": dist})
    write_table(out / "smoothing.csv", ["n", "sup_distance", "lipschitz", "min", "max"], rows)
    summary: dict[str, Any] = {"reference_lipschitz": lip, "levels": [dict(zip(["n", "sup_distance", "lipschitz", "min", "max"], r)) for r in rows]}

    if s.get("driver", True):
        zlo, zhi = float(s.get("z_lo", -5.0)), float(s.get("z_hi", 5.0))
        psi = sm.GriddedFunction.sample(lambda p: 0.5 * p[:, 0] ** 2, zlo, zhi, int(s.get("z_resolution", 401)), labels=("z",))
        drows = []
        for n in levels:
            psi_n = sm.inf_sup_driver(psi, n, [0])
            drows.append([n, psi_n.sup_distance])
        summary["driver_levels"] = [{"n": n, "weighted_sup_distance": d} for n, d in drows]
        write_table(out / "driver_smoothing.csv", ["n", "weighted_sup_distance"], drows)

    if s.get("stability", False):
        summary["stability"] = stability_sweeps(cfg, seed, levels, threads).copy()
        for label in ("terminal", "driver"):
            rep = summary["stability"][label]
            if not (rep["reduction"][0] >= 2 and rep["reduction"][1] >= 2):
                failures.append({"check": f"{label} stability reduction", **rep})
    return summary, failures


def stability_sweeps(cfg, seed: int, levels: Sequence[float], threads: int = 1) -> dict[str, Any]:
    """BSDE distances under inf-sup approximations of ``phi`` and of ``psi``."""
    s = cfg.get("smooth", {})
    spec, grid = build_spec(cfg), build_grid(cfg)
    if spec.dim != 1:
        raise ValueError("stability sweeps use a one-dimensional model")
    x0 = build_x0(cfg, 1)
    mc = cfg["mc"]
    bundle = simulate(spec, grid, x0, mc["paths"], seed, mc["antithetic"], threads)
    deg, pic = int(cfg["bsde"]["basis_degree"]), int(cfg["bsde"]["picard_iters"])

    # terminal sweep: |x| capped, zero driver
    cap = float(s.get("cap", 2.0))
    phi = bs.make_terminal("abs-clipped", {"cap": cap}, 1)
    reach = float(s.get("reach", 8.0))
    grid_phi = sm.GriddedFunction.sample(lambda p: phi(p), -reach, reach, int(s.get("resolution", 4001)))
    approx = []
    for n in levels:
        phi_n = sm.inf_sup_terminal(grid_phi, n)
        approx.append((n, sm.gridded_terminal(phi_n), phi_n.sup_distance))
    zero = bs.make_driver("zero")
    term_rep = bs.stability_under_terminal_approx(spec, grid, bundle, zero, phi, approx, deg, pic)

    # driver sweep: (1/2)|z|^2 with a bounded terminal
    gamma = 1.0
    psi = bs.make_driver("pure-quadratic", {"gamma": gamma})
    terminal = bs.make_terminal("steep-sigmoid", {"kappa": float(s.get("kappa", 2.0))}, 1)
    zlo, zhi = float(s.get("z_lo", -5.0)), float(s.get("z_hi", 5.0))
    grid_psi = sm.GriddedFunction.sample(lambda p: 0.5 * gamma * p[:, 0] ** 2, zlo, zhi, int(s.get("z_resolution", 2001)), labels=("z",))
    dapprox = []
    for n in levels:
        psi_n = sm.inf_sup_driver(grid_psi, n, [0])
        dapprox.append((n, sm.gridded_driver(psi_n, [("z", 0)], psi.L_psi, psi.K_psi + psi_n.sup_distance), psi_n.sup_distance))
    drv_rep = bs.stability_under_driver_approx(spec, grid, bundle, psi, terminal, dapprox, deg, pic)
    return {"terminal": term_rep.to_dict(), "driver": drv_rep.to_dict()}


def run_control(cfg, seed: int, out: Path, threads: int = 1):
    spec, grid = build_spec(cfg), build_grid(cfg)
    x0 = build_x0(cfg, spec.dim)
    terminal = build_terminal(cfg, spec.dim)
    problem = build_problem(cfg, spec, terminal)
    c = cfg.get("control", {})
    mc = cfg["mc"]
    bundle = simulate(spec, grid, x0, mc["paths"], seed, mc["antithetic"], threads)
    sol = _solve(cfg, spec, grid, bundle, ct.hamiltonian_driver(problem), terminal)
    v_se = float(sol.value_se(0, x0[None])[0])
    run = ct.closed_loop(problem, spec, grid, x0, sol, mc["paths"], seed + 1, mc["antithetic"])
    rng = np.random.default_rng([seed, 7])
    count = int(c.get("adversarial", 20))
    spread = float(c.get("adversarial_range", 2.0))
    adversarial = []
    for k, u in enumerate(problem.admissible.sample(rng, count, problem.action_dim, spread)):
        cost = ct.constant_control_cost(problem, spec, grid, x0, u, mc["paths"], seed + 2 + k, mc["antithetic"])
        adversarial.append((u, cost))
    rel_tol = c.get("relative_tolerance")
    report = ct.fundamental_relation_check(
        sol.y0, v_se, run.cost, adversarial, float(c.get("bias_budget", 0.0)), None if rel_tol is None else float(rel_tol)
    )
    write_table(out / "adversarial.csv", ["u", "J", "se"], [[float(np.asarray(u)[0]), cst.mean, cst.se] for u, cst in adversarial])
    summary = {"report": report, "bsde": sol.summary(), "max_abs_feedback": run.max_abs_control, "problem": problem.to_dict()}
    failures = bound_failures(sol, "control")
    if not report["passed"]:
        failures.append({"check": "fundamental relation", "gap": report["gap"], "violations": len(report["violations"])})
    return summary, failures


def run_heat(cfg, seed: int, out: Path, threads: int = 1):
    h = dict(cfg.get("heat", {}))
    dims = h.pop("dims", [2, 4, 8, 16])
    steps = int(h.pop("steps", cfg["grid"]["steps"]))
    paths = int(h.pop("paths", cfg["mc"]["paths"]))
    degree = int(h.pop("basis_degree", 2))
    tol = float(h.pop("tolerance", 0.02))
    params = ht.HeatModelParams.from_dict(h)
    model = ht.build(params.with_modes(max(dims)))
    k = np.arange(1, max(dims) + 1)
    spectrum_err = float(np.max(np.abs(-model.spec.a_eigenvalues - k**2 * np.pi**2)))
    parseval = ht.parseval_gap(model, np.random.default_rng(seed))
    rep = ht.truncation_study(params, dims, steps, paths, seed, degree, tol, threads=threads)
    write_table(
        out / "truncation.csv",
        ["modes", "value", "value_se", "cost", "cost_se"],
        [[r.modes, r.value, r.value_se, r.cost, r.cost_se] for r in rep.rows],
    )
    summary = {"spectrum_max_error": spectrum_err, "parseval_gap": parseval, "truncation": rep.to_dict()}
    failures: Failures = []
    if spectrum_err > 1e-9 * max(dims) ** 2 * np.pi**2:
        failures.append({"check": "spectrum", "error": spectrum_err})
    if parseval > 1e-8:
        failures.append({"check": "parseval", "gap": parseval})
    if not rep.passed:
        failures.append({"check": "truncation", "relative": rep.relative_last})
    for r in rep.rows:
        if max(r.y_clip_rate, r.z_clip_rate) >= 0.01:
            failures.append({"check": "clip rate", "modes": r.modes})
    return summary, failures


RUNNERS: dict[str, Callable] = {
    "validate": run_validate,
    "forward": run_forward,
    "bsde": run_bsde,
    "bismut": run_bismut,
    "smooth": run_smooth,
    "control": run_control,
    "heat-demo": run_heat,
}
