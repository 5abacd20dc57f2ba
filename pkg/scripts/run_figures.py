"""Run the figure scenarios and write plot-ready CSV bundles.

For each scenario a directory ``<out>/<name>/`` receives ``log.csv``,
``summary.json`` and the report bundles.  A one-line digest per scenario is
printed at the end.

    python3 scripts/run_figures.py --out results/figures
"""

import argparse
from pathlib import Path

from quadfdr.config import load_scenario
from quadfdr.report import report
from quadfdr.sim import run_scenario

FIGURES = ("nominal_hover", "fig3_gyro_bias", "fig3_position_bias", "fig4a_imu_alias_no_fr",
           "fig5b_imu_alias_fr")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenarios", default="scenarios")
    ap.add_argument("--out", default="results/figures")
    ap.add_argument("--seed", type=int)
    ap.add_argument("names", nargs="*", default=list(FIGURES))
    args = ap.parse_args(argv)

    digest = []
    for name in args.names:
        cfg = load_scenario(Path(args.scenarios) / f"{name}.yaml", seed=args.seed)
        log, s = run_scenario(cfg)
        out = Path(args.out) / name
        out.mkdir(parents=True, exist_ok=True)
        log.write_csv(out / "log.csv")
        (out / "summary.json").write_text(s.to_json() + "\n")
        report(log, out, cfg.fdi)
        end = f"crash at {s.crash_time:.3f} s" if s.crashed else f"flew {cfg.duration:.1f} s"
        digest.append(f"{name:<24} {end:<18} FDI {s.final_status:<15} "
                      f"max excursion {s.max_excursion:.3f} m  "
                      f"peak CH_q {s.chattering_peak.get('q', float('nan')):.4f}")
    print("\n".join(digest))


if __name__ == "__main__":
    main()
