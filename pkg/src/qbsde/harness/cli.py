"""Command-line entry point ``qbsde``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Any, Sequence

from .config import ConfigError, load_config, normalise
from .experiments import RUNNERS
from .report import envelope, write_json

SUITES = ("trivial", "derived", "all")


def run_command(cmd: str, cfg: dict[str, Any], seed: int, out: Path, threads: int = 1) -> list[dict[str, Any]]:
    """Run one experiment and write ``summary.json`` (and ``failures.json``)."""
    out.mkdir(parents=True, exist_ok=True)
    summary, failures = RUNNERS[cmd](cfg, seed, out, threads)
    write_json(out / "summary.json", envelope(cfg, seed, cmd, {"summary": summary, "passed": not failures}))
    failure_file = out / "failures.json"
    if failures:
        write_json(failure_file, envelope(cfg, seed, cmd, {"failures": failures}))
    elif failure_file.exists():
        failure_file.unlink()
    return failures


def run_suite(suite: str, out: Path, stream=sys.stdout) -> list[dict[str, Any]]:
    from . import checks, criteria

    results: list[dict[str, Any]] = []
    failures: list[dict[str, Any]] = []
    if suite in ("trivial", "all"):
        for name, fn in checks.TRIVIAL.items():
            ok, detail = fn()
            print(f"[{'PASS' if ok else 'FAIL'}] {name}", file=stream)
            results.append({"check": name, "passed": ok, "detail": detail})
            if not ok:
                failures.append({"check": name, **detail})
    if suite in ("derived", "all"):
        for fn in criteria.ALL:
            res = fn()
            print(res.line(), file=stream)
            results.append(res.to_dict())
            if not res.passed:
                failures.append({"check": f"criterion {res.number}", "title": res.title})
    out.mkdir(parents=True, exist_ok=True)
    meta = {"schema_version": 1, "suite": suite}
    write_json(out / "summary.json", envelope(meta, 0, "check", {"results": results, "passed": not failures}))
    if failures:
        write_json(out / "failures.json", envelope(meta, 0, "check", {"failures": failures}))
    return failures


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qbsde", description="Quadratic BSDE, Bismut gradient and control experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in list(RUNNERS) + ["check"]:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, required=name != "check")
        s.add_argument("--seed", type=int, default=None, help="overrides mc.seed")
        s.add_argument("--out", type=Path, default=None)
        s.add_argument("--threads", type=int, default=1)
        if name == "check":
            s.add_argument("--suite", choices=SUITES, default="trivial")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = args.out or Path("qbsde-out") / args.command
    if args.command == "check":
        failures = run_suite(args.suite, out)
        return 1 if failures else 0
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = normalise({**cfg, "schema_version": cfg["schema_version"], "mc": {**cfg["mc"], "seed": args.seed}})
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    seed = int(cfg["mc"]["seed"])
    try:
        failures = run_command(args.command, cfg, seed, out, max(1, args.threads))
    except (ValueError, RuntimeError) as exc:
        print(f"{args.command} failed: {exc}", file=sys.stderr)
        return 3
    for f in failures:
        print(f"assertion failed: {f.get('check')}", file=sys.stderr)
    print(f"wrote {out / 'summary.json'}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
