"""Seeded parameter sweeps with an FDI confusion matrix."""

from __future__ import annotations

import csv
import itertools
import json
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from .config import ConfigError, from_dict, load_raw, set_path
from .fdi import FaultStatus
from .sim import run_scenario

ATTACK_CLASSES = ("none", "imu", "position", "mixed")
OUTCOMES = tuple(s.value for s in FaultStatus)
EXPECTED = {"none": FaultStatus.NOMINAL.value, "imu": FaultStatus.IMU_FAULT.value,
            "position": FaultStatus.POSITION_FAULT.value}


def load_grid(path) -> dict:
    try:
        with open(path) as fh:
            grid = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read grid {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed grid {path}: {exc}") from exc
    if not isinstance(grid, dict):
        raise ConfigError("grid file must contain a mapping")
    return grid


def expand_grid(grid: dict) -> list[tuple[str, dict]]:
    """Cartesian product of the grid axes as (cell label, {path: value}) pairs."""
    if not grid:
        raise ConfigError("sweep grid is empty")
    axes = []
    for key, values in grid.items():
        if key == "cases":
            if not isinstance(values, dict) or not values:
                raise ConfigError("'cases' must be a non-empty mapping")
            axes.append([(name, dict(ov or {})) for name, ov in values.items()])
        else:
            if not isinstance(values, list) or not values:
                raise ConfigError(f"grid axis '{key}' must be a non-empty list")
            axes.append([(f"{key}={v}", {key: v}) for v in values])
    cells = []
    for combo in itertools.product(*axes):
        label = ",".join(lbl for lbl, _ in combo)
        merged = {}
        for _, ov in combo:
            merged.update(ov)
        cells.append((label, merged))
    return cells


def _run_one(job):
    raw, label, seed = job
    try:
        cfg = from_dict(raw)
        _, summary = run_scenario(cfg, keep_log=False)
        out = asdict(summary)
    except Exception as exc:  # noqa: BLE001 - one bad cell must not abort the sweep
        out = {"error": f"{type(exc).__name__}: {exc}",
               "traceback": traceback.format_exc(limit=3)}
    out["cell"] = label
    out["seed"] = seed
    return out


def build_jobs(template: dict, cells, seeds) -> list:
    jobs = []
    for label, ov in cells:
        for seed in seeds:
            raw = yaml.safe_load(yaml.safe_dump(template))
            for path, value in ov.items():
                set_path(raw, path, value)
            raw["seed"] = int(seed)
            jobs.append((raw, label, int(seed)))
    return jobs


def confusion_matrix(results) -> dict[str, dict[str, int]]:
    cm = {a: {o: 0 for o in OUTCOMES} for a in ATTACK_CLASSES}
    for r in results:
        if "error" in r:
            continue
        cm[r["attack_class"]][r["final_status"]] += 1
    return cm


def off_diagonal(cm) -> int:
    return sum(n for a, row in cm.items() for o, n in row.items()
               if a in EXPECTED and o != EXPECTED[a])


def aggregate(results) -> dict:
    ok = [r for r in results if "error" not in r]
    cm = confusion_matrix(results)

    def pct(key):
        vals = np.array([r[key] for r in ok if r.get(key) is not None], dtype=float)
        if not len(vals):
            return None
        return {f"p{q}": float(np.percentile(vals, q)) for q in (50, 90, 99)}

    return {
        "runs": len(results),
        "errors": len(results) - len(ok),
        "crashes": sum(bool(r["crashed"]) for r in ok),
        "misisolations": sum(bool(r["misisolation"]) for r in ok),
        "false_alarms": sum(bool(r["false_alarm"]) for r in ok),
        "off_diagonal": off_diagonal(cm),
        "confusion": cm,
        "detection_latency": pct("detection_latency"),
        "isolation_latency": pct("isolation_latency"),
    }


def sweep(templates, grid: dict, seeds, jobs: int = 1) -> tuple[list[dict], dict]:
    """Run every grid cell of every template for each seed.

    ``templates`` are raw scenario mappings (or paths).  Returns the per-run
    summaries (errors captured per run) and the aggregate.
    """
    cells = expand_grid(grid)
    work = []
    for tpl in templates:
        raw = load_raw(tpl) if isinstance(tpl, (str, Path)) else tpl
        if isinstance(tpl, (str, Path)):
            raw.setdefault("name", Path(tpl).stem)
        work += build_jobs(raw, cells, seeds)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, work))
    else:
        results = [_run_one(j) for j in work]
    return results, aggregate(results)


SUMMARY_FIELDS = ("name", "cell", "seed", "attack_class", "final_status", "crashed", "crash_time",
                  "t_detect", "t_isolate", "detection_latency", "isolation_latency",
                  "misisolation", "false_alarm", "position_rmse", "max_excursion",
                  "max_excursion_after_attack", "error")


def write_sweep(out_dir, results, agg) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "runs.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS + ("chattering_peak_q",),
                           extrasaction="ignore")
        w.writeheader()
        for r in results:
            row = dict(r)
            row["chattering_peak_q"] = r.get("chattering_peak", {}).get("q")
            w.writerow(row)
    with open(out / "confusion.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["attack_class", *OUTCOMES])
        for a, row in agg["confusion"].items():
            w.writerow([a, *(row[o] for o in OUTCOMES)])
    with open(out / "aggregate.json", "w") as fh:
        json.dump(agg, fh, indent=2, sort_keys=True)
