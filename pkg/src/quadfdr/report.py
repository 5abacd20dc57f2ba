"""Plot-ready CSV bundles from a flight log.

One file per figure panel, each with a fixed header:

- ``trajectory.csv``: truth, reference and measured position
- ``attitude.csv``: true roll/pitch/yaw, fused and recovered roll/pitch, controller mode
- ``imu.csv``: gyro and accelerometer readings as delivered, FDI status
- ``chattering.csv``: the four chattering channels and the +/- threshold lines
- ``residuals.csv``: windowed residuals (window boundaries only) and thresholds
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .estimator import CHATTER_NAMES
from .fdi import STATE_NAMES, FdiThresholds
from .sim import FlightLog, _fmt

BUNDLES = {
    "trajectory": ["time", "true_x", "true_y", "true_z", "ref_x", "ref_y", "ref_z",
                   "pos_x", "pos_y", "pos_z"],
    "attitude": ["time", "true_phi", "true_theta", "true_psi", "fused_phi", "fused_theta",
                 "rec_phi", "rec_theta", "rec_valid", "ctrl_mode"],
    "imu": ["time", "gyro_p", "gyro_q", "gyro_r", "accel_x", "accel_y", "accel_z", "fdi_status"],
    "chattering": ["time", *(f"ch_{n}" for n in CHATTER_NAMES), "threshold_upper",
                   "threshold_lower"],
    "residuals": ["time", *(f"res_{n}" for n in STATE_NAMES), *(f"th_{n}" for n in STATE_NAMES)],
}


def _write(path: Path, header, rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(float(v)) for v in row) + "\n")


def report(log: FlightLog, out_dir, thresholds: FdiThresholds | None = None) -> dict[str, Path]:
    if len(log) == 0:
        raise ValueError("flight log is empty")
    th = thresholds or FdiThresholds()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = len(log)
    paths = {}
    for name, header in BUNDLES.items():
        cols = []
        rows_mask = np.ones(n, dtype=bool)
        for h in header:
            if h == "threshold_upper":
                cols.append(np.full(n, th.chattering[2]))
            elif h == "threshold_lower":
                cols.append(np.full(n, -th.chattering[2]))
            elif h.startswith("th_"):
                cols.append(np.full(n, th.residual[STATE_NAMES.index(h[3:])]))
            else:
                cols.append(log.col(h))
        if name == "residuals":
            rows_mask = ~np.isnan(log.col("res_x"))
        data = np.column_stack(cols)[rows_mask]
        paths[name] = out / f"{name}.csv"
        _write(paths[name], header, data)
    return paths
