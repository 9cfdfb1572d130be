"""Command line: ``mixedtraffic simulate|verify|example1|converge --config PATH``.

Exit codes: 0 success, 1 solver failure (or failed verification), 2 bad
configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import analysis
from .config import ConfigError, load_config, preset_path

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mixedtraffic",
                                description="Mixed nonlocal/local traffic solver")
    p.add_argument("command", choices=["simulate", "verify", "example1", "converge"])
    p.add_argument("--config", required=True,
                   help="config JSON, or preset:<name> for a shipped preset")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--levels", type=int, help="refinement levels for converge")
    p.add_argument("--seed", type=int, help="seed for randomized checks")
    return p


def _resolve(config: str) -> Path:
    if config.startswith("preset:"):
        return preset_path(config.split(":", 1)[1])
    return Path(config)


def _write_json(out: Path, name: str, payload) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / name, "w") as fh:
        json.dump(payload, fh, indent=2)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(_resolve(args.config), out_dir=args.out, seed=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = cfg.out_dir
    try:
        if args.command == "simulate":
            res = analysis.cmd_simulate(cfg, out)
            print(f"simulated to t={res.final.time:.6g} in {len(res.report.windows)} "
                  f"windows; outputs in {out}")
            return EXIT_OK
        if args.command == "verify":
            summary = analysis.cmd_verify(cfg)
            print(summary.text())
            _write_json(out, "verify.json", summary.to_dict())
            return EXIT_OK if summary.passed else EXIT_SOLVER
        if args.command == "example1":
            rep = analysis.cmd_example1(cfg)
            print(f"t={rep.horizon} dx={rep.dx} limit displacement "
                  f"{rep.limit_displacement:.6g}")
            print("n    initial    3/(2n)     final      drift")
            for r in rep.rows:
                print(f"{r.n:<4} {r.initial_distance:.6f}  {r.expected_initial:.6f}  "
                      f"{r.final_distance:.6f}  {r.stationary_drift:.3e}")
            _write_json(out, "example1.json", rep.to_dict())
            return EXIT_OK
        if args.command == "converge":
            try:
                table = analysis.cmd_converge(cfg, levels=args.levels)
            except ValueError as exc:
                print(f"config error: {exc}", file=sys.stderr)
                return EXIT_CONFIG
            print(table.text())
            _write_json(out, "converge.json", table.to_dict())
            return EXIT_OK
    except analysis.SOLVER_ERRORS as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_CONFIG  # pragma: no cover


if __name__ == "__main__":
    sys.exit(main())
