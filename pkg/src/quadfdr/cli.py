"""Command line entry point.

Exit codes: 0 run completed, 2 crash declared, 1 configuration or I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, dump_scenario, load_scenario
from .report import report
from .sim import FlightLog, run_scenario
from .sweep import load_grid, sweep, write_sweep

EXIT_OK, EXIT_ERROR, EXIT_CRASH = 0, 1, 2


def cmd_run(args) -> int:
    cfg = load_scenario(args.scenario, args.override, seed=args.seed)
    log, summary = run_scenario(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log.write_csv(out / "log.csv")
    (out / "summary.json").write_text(summary.to_json() + "\n")
    with open(out / "events.json", "w") as fh:
        json.dump(log.events, fh, indent=2)
    dump_scenario(cfg, out / "scenario.yaml")
    status = f"crash at t={summary.crash_time:.3f} s ({summary.crash_reason})" \
        if summary.crashed else "completed"
    print(f"{cfg.name} seed={cfg.seed}: {status}; FDI {summary.final_status}; "
          f"RMSE {summary.position_rmse:.4f} m")
    return EXIT_CRASH if summary.crashed else EXIT_OK


def cmd_sweep(args) -> int:
    grid = load_grid(args.grid)
    results, agg = sweep(args.scenario, grid, range(args.first_seed, args.first_seed + args.seeds),
                         jobs=args.jobs)
    write_sweep(args.out, results, agg)
    print(f"{agg['runs']} runs, {agg['errors']} errors, {agg['crashes']} crashes, "
          f"{agg['off_diagonal']} off-diagonal")
    for cls, row in agg["confusion"].items():
        if any(row.values()):
            print(f"  {cls:>8}: " + ", ".join(f"{k}={v}" for k, v in row.items()))
    return EXIT_OK


def cmd_report(args) -> int:
    path = Path(args.log)
    if not path.is_file():
        raise ConfigError(f"log file {path} not found")
    log = FlightLog.read_csv(path)
    paths = report(log, args.out)
    for p in paths.values():
        print(p)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors, which would read as a crash
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="quadfdr", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="simulate one scenario")
    run.add_argument("--scenario", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="run a scenario over a grid and seeds")
    sw.add_argument("--scenario", required=True, nargs="+")
    sw.add_argument("--grid", required=True)
    sw.add_argument("--seeds", type=int, required=True)
    sw.add_argument("--first-seed", type=int, default=0)
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--out", required=True)
    sw.set_defaults(func=cmd_sweep)

    rep = sub.add_parser("report", help="write plot-ready CSV bundles from a log")
    rep.add_argument("--log", required=True)
    rep.add_argument("--out", required=True)
    rep.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
