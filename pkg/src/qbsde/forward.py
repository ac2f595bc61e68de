"""Forward paths and their variational flows on a time grid.

Exponential-Euler step: ``X_{i+1} = e^{dt A}(X_i + F(t_i, X_i) dt) + G(t_i) dW_i``.
Brownian increments are drawn in fixed-size blocks, block ``b`` seeded by
``(seed, b)``, so the noise depends only on ``(seed, M, steps, d, dt)``:
changing the initial state reuses identical increments (common random numbers).
"""

from __future__ import annotations

import csv
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .model import GalerkinSpec, ModelError, TimeGrid

BLOCK_PATHS = 4096
_MAGIC = b"QBPB"
_VERSION = 1
# magic, version, paths, steps, dim, has_flows, antithetic, seed, t0, t1
_HEADER = struct.Struct("<4sIQQQBBQdd")


class SimulationError(RuntimeError):
    def __init__(self, message: str, path: int | None = None, step: int | None = None):
        super().__init__(message)
        self.path = path
        self.step = step


@dataclass(frozen=True, eq=False)
class PathBundle:
    grid: TimeGrid
    x0: np.ndarray
    seed: int
    states: np.ndarray
    dw: np.ndarray
    antithetic: bool = False
    flows: np.ndarray | None = None
    direction: np.ndarray | None = None
    flow_bound: float | None = None

    @property
    def paths(self) -> int:
        return self.states.shape[0]

    @property
    def steps(self) -> int:
        return self.grid.steps

    @property
    def dim(self) -> int:
        return self.states.shape[2]

    @property
    def terminal(self) -> np.ndarray:
        return self.states[:, -1, :]

    def independent(self, samples: np.ndarray) -> np.ndarray:
        """Collapse antithetic pairs so that the returned draws are i.i.d."""
        samples = np.asarray(samples, dtype=float)
        if not self.antithetic:
            return samples
        return 0.5 * (samples[0::2] + samples[1::2])

    def mean_and_se(self, samples: np.ndarray) -> tuple[float, float]:
        draws = self.independent(samples)
        n = draws.shape[0]
        se = float(np.std(draws, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
        return float(np.mean(samples)), se

    def moment_report(self) -> dict[str, float]:
        """Empirical ``E sup_t |X_t|^2`` against ``1 + |x0|^2``."""
        sup_sq = np.max(np.sum(self.states**2, axis=2), axis=1)
        e_sup = float(np.mean(sup_sq))
        return {"e_sup_sq": e_sup, "constant": e_sup / (1.0 + float(self.x0 @ self.x0))}


def brownian_increments(
    seed: int, paths: int, steps: int, dim: int, dt: float, antithetic: bool = False
) -> np.ndarray:
    """Increments ``(paths, steps, dim)`` with variance ``dt``.

    With ``antithetic`` the paths come in interleaved pairs ``(2k, 2k+1)``
    carrying opposite increments.
    """
    if paths < 1:
        raise ModelError("need at least one path")
    if seed < 0:
        raise ModelError("seed must be non-negative")
    if antithetic and paths % 2:
        raise ModelError("antithetic sampling needs an even number of paths")
    out = np.empty((paths, steps, dim))
    if steps == 0:
        return out
    scale = np.sqrt(dt)
    for b, start in enumerate(range(0, paths, BLOCK_PATHS)):
        n = min(BLOCK_PATHS, paths - start)
        rng = np.random.default_rng([seed, b])
        if antithetic:
            g = rng.standard_normal((n // 2, steps, dim)) * scale
            out[start : start + n : 2] = g
            out[start + 1 : start + n : 2] = -g
        else:
            out[start : start + n] = rng.standard_normal((n, steps, dim)) * scale
    return out


def _check_finite(x: np.ndarray, step: int, offset: int = 0) -> None:
    if not np.all(np.isfinite(x)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(x), axis=-1))[0]) + offset
        raise SimulationError(f"non-finite state on path {bad} at step {step}", bad, step)


def _simulate_block(spec, grid, x0, dw, offset):
    m = dw.shape[0]
    dt = grid.dt
    states = np.empty((m, grid.steps + 1, spec.dim))
    states[:, 0, :] = x0
    decay = np.exp(spec.a_eigenvalues * dt)
    x = states[:, 0, :]
    for i in range(grid.steps):
        t = grid.node(i)
        x = decay * (x + spec.drift(t, x) * dt) + spec.diffusion.sigma(t) * dw[:, i, :]
        _check_finite(x, i + 1, offset)
        states[:, i + 1, :] = x
    return states


def _blocks(paths: int):
    return [(s, min(s + BLOCK_PATHS, paths)) for s in range(0, paths, BLOCK_PATHS)]


def _run_blocks(fn, paths: int, threads: int):
    blocks = _blocks(paths)
    if threads <= 1 or len(blocks) == 1:
        return [fn(a, b) for a, b in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        # map preserves block order, so the reduction order is fixed
        return list(pool.map(lambda ab: fn(*ab), blocks))


def simulate(
    spec: GalerkinSpec,
    grid: TimeGrid,
    x0,
    paths: int,
    seed: int,
    antithetic: bool = False,
    threads: int = 1,
    dw: np.ndarray | None = None,
) -> PathBundle:
    """Simulate ``paths`` forward trajectories started at ``x0`` at ``grid.t0``."""
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (spec.dim,)).copy()
    if grid.t0 < 0 or grid.t1 > spec.horizon * (1 + 1e-12):
        raise ModelError(f"grid [{grid.t0}, {grid.t1}] outside [0, {spec.horizon}]")
    if dw is None:
        dw = brownian_increments(seed, paths, grid.steps, spec.dim, grid.dt, antithetic)
    elif dw.shape != (paths, grid.steps, spec.dim):
        raise ModelError(f"increments have shape {dw.shape}")
    parts = _run_blocks(lambda a, b: _simulate_block(spec, grid, x0, dw[a:b], a), paths, threads)
    states = np.concatenate(parts, axis=0)
    return PathBundle(grid=grid, x0=x0, seed=seed, states=states, dw=dw, antithetic=antithetic)


def variational(spec: GalerkinSpec, bundle: PathBundle, h, threads: int = 1) -> PathBundle:
    """Fill ``flows`` with the derivative of the scheme in direction ``h``.

    ``D_{i+1} = e^{dt A}(D_i + J_F(t_i, X_i) D_i dt)``, ``D_0 = h`` -- the exact
    derivative of the discrete map, so finite differences on paired paths
    converge to it at rate ``eps^2``.
    """
    h = np.broadcast_to(np.asarray(h, dtype=float), (spec.dim,)).copy()
    grid = bundle.grid
    dt = grid.dt
    decay = np.exp(spec.a_eigenvalues * dt)

    def block(a, b):
        xs = bundle.states[a:b]
        flows = np.empty_like(xs)
        flows[:, 0, :] = h
        d = flows[:, 0, :]
        for i in range(grid.steps):
            d = decay * (d + spec.drift.jvp(grid.node(i), xs[:, i, :], d) * dt)
            flows[:, i + 1, :] = d
        return flows

    flows = np.concatenate(_run_blocks(block, bundle.paths, threads), axis=0)
    norm_h = float(np.linalg.norm(h))
    bound = 0.0 if norm_h == 0 else float(np.max(np.linalg.norm(flows, axis=2)) / norm_h)
    return replace(bundle, flows=flows, direction=h, flow_bound=bound)


# ---------------------------------------------------------------------------
# export


def dump_bundle(bundle: PathBundle, path: str | Path) -> None:
    """Little-endian binary dump: header, x0, then row-major states, dw, flows."""
    has_flows = bundle.flows is not None
    header = _HEADER.pack(
        _MAGIC,
        _VERSION,
        bundle.paths,
        bundle.steps,
        bundle.dim,
        int(has_flows),
        int(bundle.antithetic),
        bundle.seed,
        bundle.grid.t0,
        bundle.grid.t1,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for arr in (bundle.x0, bundle.states, bundle.dw):
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        if has_flows:
            fh.write(np.ascontiguousarray(bundle.direction, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(bundle.flows, dtype="<f8").tobytes())


def load_bundle(path: str | Path) -> PathBundle:
    raw = Path(path).read_bytes()
    magic, version, m, n, d, has_flows, anti, seed, t0, t1 = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != _VERSION:
        raise ValueError(f"{path}: not a path-bundle dump")
    pos = _HEADER.size

    def take(shape):
        nonlocal pos
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape)
        pos += 8 * count
        return arr.astype(float)

    x0 = take((d,))
    states = take((m, n + 1, d))
    dw = take((m, n, d))
    direction = flows = None
    if has_flows:
        direction = take((d,))
        flows = take((m, n + 1, d))
    grid = TimeGrid(t0, t1, n)
    return PathBundle(grid, x0, seed, states, dw, bool(anti), flows, direction)


def write_summary_csv(bundle: PathBundle, path: str | Path) -> None:
    """Per-node mean and variance of every mode."""
    d = bundle.dim
    mean = bundle.states.mean(axis=0)
    var = bundle.states.var(axis=0)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"mean_{k}" for k in range(d)] + [f"var_{k}" for k in range(d)])
        for i, t in enumerate(bundle.grid.nodes):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in mean[i]] + [repr(float(v)) for v in var[i]])
