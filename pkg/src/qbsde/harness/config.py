"""Experiment configuration: TOML tables with a versioned schema."""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1
MEMORY_BUDGET_BYTES = 2 * 1024**3

KNOWN_SECTIONS = {
    "schema_version",
    "experiment",
    "model",
    "grid",
    "mc",
    "bsde",
    "terminal",
    "driver",
    "bismut",
    "smooth",
    "control",
    "heat",
    "mild",
    "output",
}

DEFAULTS: dict[str, Any] = {
    "model": {"dim": 1, "horizon": 1.0, "eigenvalues": "zero"},
    "grid": {"steps": 64, "t0": 0.0, "x0": [0.0]},
    "mc": {"paths": 20_000, "seed": 0, "antithetic": True},
    "bsde": {"basis_degree": 3, "picard_iters": 3, "clip_multiplier": 4.0},
    "terminal": {"kind": "steep-sigmoid", "params": {"kappa": 4.0}},
    "driver": {"kind": "zero", "params": {}},
}


class ConfigError(ValueError):
    """Malformed configuration; ``field`` names the offending entry."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        where = "".join([f" [field {field}]" if field else "", f" [line {line}]" if line else ""])
        super().__init__(message + where)
        self.field = field
        self.line = line


def _merge(base: dict, extra: Mapping) -> dict:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if isinstance(val, Mapping) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def parse_config(text: str) -> dict[str, Any]:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigError(f"cannot parse config: {exc}", line=line) from None
    return normalise(raw)


def load_config(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    return parse_config(path.read_text())


def normalise(raw: Mapping[str, Any]) -> dict[str, Any]:
    version = raw.get("schema_version")
    if version is None:
        raise ConfigError("missing schema_version", field="schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version!r}", field="schema_version")
    unknown = sorted(set(raw) - KNOWN_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}", field=unknown[0])
    cfg = _merge(DEFAULTS, raw)
    _check(cfg)
    return cfg


def _positive_int(cfg, section, key):
    val = cfg[section].get(key)
    if not isinstance(val, int) or isinstance(val, bool) or val < 1:
        raise ConfigError(f"{key} must be a positive integer", field=f"{section}.{key}")
    return val


def _check(cfg: dict[str, Any]) -> None:
    dim = _positive_int(cfg, "model", "dim")
    steps = _positive_int(cfg, "grid", "steps")
    paths = _positive_int(cfg, "mc", "paths")
    seed = cfg["mc"].get("seed")
    if not isinstance(seed, int) or seed < 0 or seed >= 2**64:
        raise ConfigError("seed must be a 64-bit non-negative integer", field="mc.seed")
    x0 = cfg["grid"]["x0"]
    if not isinstance(x0, list) or len(x0) not in (1, dim):
        raise ConfigError(f"x0 must be a list of length 1 or {dim}", field="grid.x0")
    if not 0 <= float(cfg["grid"]["t0"]) <= float(cfg["model"]["horizon"]):
        raise ConfigError("t0 must lie in [0, horizon]", field="grid.t0")
    # states, increments and flows
    need = 3 * paths * (steps + 1) * dim * 8
    if need > MEMORY_BUDGET_BYTES:
        raise ConfigError(f"paths*steps*dim needs ~{need / 1024**3:.1f} GiB, over the budget", field="mc.paths")
    if cfg["mc"].get("antithetic") and paths % 2:
        raise ConfigError("antithetic sampling needs an even number of paths", field="mc.paths")
    for section in ("terminal", "driver"):
        if "kind" not in cfg[section]:
            raise ConfigError("missing kind", field=f"{section}.kind")


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_plain)


def _plain(obj):
    try:
        import numpy as np

        if isinstance(obj, np.ndarray):
            return obj.tolist()
        if isinstance(obj, np.generic):
            return obj.item()
    except ImportError:  # pragma: no cover
        pass
    raise TypeError(f"not serialisable: {type(obj).__name__}")


def config_hash(cfg: Mapping[str, Any]) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()
