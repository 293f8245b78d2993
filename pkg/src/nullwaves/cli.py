"""Batch front-end: run named experiments from config files.

Exit codes: 0 all criteria passed, 1 a criterion failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import ConfigError, load_config
from .experiments import EXPERIMENTS, run


def list_experiments() -> str:
    lines = ["experiment kinds (config key: kind = <name>):"]
    for name, (_, keys) in sorted(EXPERIMENTS.items()):
        lines.append(f"  {name:18s} keys: {keys}")
    lines.append("common keys: out_dir (artifact directory, default ./out)")
    lines.append("thread count: set NULLWAVES_THREADS (module-internal parallelism)")
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="nullwaves",
        description="verification experiments for nonlinear wave interaction on Lorentzian backgrounds",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment from a config file")
    p_run.add_argument("config", help="path to the key-value config file")
    p_run.add_argument("--out-dir", default=None, help="override the config's out_dir")
    sub.add_parser("list", help="list experiment kinds and their config keys")

    args = parser.parse_args(argv)
    if args.command == "list":
        print(list_experiments())
        return 0

    try:
        cfg = load_config(args.config)
        out_dir = args.out_dir or cfg.get("out_dir", "out")
        report = run(cfg, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    for c in report.criteria:
        status = "PASS" if c["passed"] else "FAIL"
        print(f"[{status}] {c['name']}: value={c['value']} target={c['target']}")
    print(f"report: {os.path.join(out_dir, f'report_{report.kind}.json')}"
          f"  wall_time={report.wall_time_s:.3f}s")
    return 0 if report.all_passed else 1


if __name__ == "__main__":
    raise SystemExit(main())
