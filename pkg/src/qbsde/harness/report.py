"""Deterministic JSON and CSV artifacts."""

from __future__ import annotations

import csv
import json
import math
import subprocess
from functools import lru_cache
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .config import config_hash


@lru_cache(maxsize=1)
def build_version() -> str:
    """``git describe`` of the source tree, or ``unknown`` outside a checkout."""
    here = Path(__file__).resolve().parent
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=here,
            capture_output=True,
            text=True,
            timeout=10,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


def to_plain(obj: Any) -> Any:
    """Recursively convert numpy values; non-finite floats become strings."""
    if isinstance(obj, Mapping):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, np.generic):
        return to_plain(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def envelope(cfg: Mapping[str, Any], seed: int, command: str, body: Mapping[str, Any]) -> dict[str, Any]:
    return {
        "command": command,
        "config_hash": config_hash(cfg),
        "seed": seed,
        "build": build_version(),
        **body,
    }


def write_json(path: str | Path, obj: Any) -> None:
    text = json.dumps(to_plain(obj), sort_keys=True, indent=2)
    Path(path).write_text(text + "\n")


def write_table(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
