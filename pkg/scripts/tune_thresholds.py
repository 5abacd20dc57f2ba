"""Derive per-state residual thresholds from seeded nominal flights.

Each threshold is ``factor`` times the 99th percentile of the windowed
residual observed after warmup.  The result is printed and written as YAML;
copy it into ``DEFAULT_RESIDUAL_THRESHOLDS`` to freeze it.

    python3 scripts/tune_thresholds.py --seeds 20 --first-seed 100
"""

import argparse

import numpy as np
import yaml

from quadfdr.config import load_scenario
from quadfdr.fdi import STATE_NAMES
from quadfdr.sim import run_scenario


def collect(scenario, seeds, duration, warmup):
    rows = []
    for seed in seeds:
        cfg = load_scenario(scenario, [f"duration={duration}", "fdi_enabled=false"], seed=seed)
        log, _ = run_scenario(cfg)
        res = log.cols("res")
        keep = (log.t >= warmup) & ~np.isnan(res[:, 0])
        rows.append(res[keep])
        print(f"seed {seed}: {keep.sum()} windows", flush=True)
    return np.vstack(rows)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="scenarios/nominal_hover.yaml")
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--first-seed", type=int, default=100)
    ap.add_argument("--duration", type=float, default=10.0)
    ap.add_argument("--factor", type=float, default=10.0)
    ap.add_argument("--warmup", type=float, default=0.5)
    ap.add_argument("--out", default="scenarios/residual_thresholds.yaml")
    args = ap.parse_args(argv)

    seeds = range(args.first_seed, args.first_seed + args.seeds)
    res = collect(args.scenario, seeds, args.duration, args.warmup)
    p99 = np.percentile(res, 99, axis=0)
    th = args.factor * p99
    for name, p, v in zip(STATE_NAMES, p99, th):
        print(f"{name:>6}: p99 {p:.3e}  max {res[:, STATE_NAMES.index(name)].max():.3e}  threshold {v:.3e}")
    with open(args.out, "w") as fh:
        yaml.safe_dump({"seeds": list(seeds), "factor": args.factor, "percentile": 99,
                        "residual": [float(f"{v:.3g}") for v in th]}, fh, sort_keys=False)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
