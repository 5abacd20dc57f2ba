"""Two-stage fault detection and isolation.

Residual windows say *that* something is wrong; the chattering of the
corrective gain says whether the IMU is the culprit.  Anything anomalous
whose chattering stays quiet for the confirmation period is attributed to
the position sensor.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .estimator import CHATTER_NAMES, N_STATES
from .sensors import CHANNELS, IMU_CHANNELS, ChannelId

STATE_NAMES = ("x", "y", "z", "vx", "vy", "vz", "phi", "theta", "psi", "p", "q", "r")


class FaultStatus(str, enum.Enum):
    NOMINAL = "Nominal"
    ANOMALY = "AnomalyDetected"
    POSITION_FAULT = "PositionFault"
    IMU_FAULT = "ImuFault"

    @property
    def isolated(self) -> bool:
        return self in (FaultStatus.POSITION_FAULT, FaultStatus.IMU_FAULT)

    @property
    def code(self) -> int:
        return list(FaultStatus).index(self)


class InvalidState(ValueError):
    pass


# residual thresholds: 10x the per-state 99th percentile of 50 ms windows over
# 20 seeded nominal 10 s hovers, seeds 100-119 (scripts/tune_thresholds.py)
DEFAULT_RESIDUAL_THRESHOLDS = (
    5.28e-06, 5.20e-06, 5.58e-06,
    6.77e-03, 6.64e-03, 6.88e-03,
    3.32e-03, 3.33e-03, 3.59e-02,
    4.17e-02, 4.13e-02, 4.23e-02,
)


@dataclass
class FdiThresholds:
    """Detection thresholds.

    ``debounce`` (M) is the number of consecutive chattering extractions
    needed for IMU attribution.  ``residual_debounce`` is the number of
    consecutive residual windows needed to declare an anomaly.
    ``confirm_windows`` residual windows of quiet chattering after detection
    attribute the anomaly to the position sensor.
    """

    residual: tuple[float, ...] = DEFAULT_RESIDUAL_THRESHOLDS
    chattering: tuple[float, float, float, float] = (0.06, 0.06, 0.06, 0.06)
    debounce: int = 3
    residual_debounce: int = 1
    confirm_windows: int = 5
    warmup: float = 0.5

    def __post_init__(self):
        self.residual = tuple(float(v) for v in self.residual)
        self.chattering = tuple(float(v) for v in self.chattering)
        if len(self.residual) != N_STATES or len(self.chattering) != 4:
            raise ValueError("need 12 residual and 4 chattering thresholds")
        if min(self.residual) <= 0 or min(self.chattering) <= 0:
            raise ValueError("thresholds must be positive")
        if self.debounce < 1 or self.residual_debounce < 1 or self.confirm_windows < 1:
            raise ValueError("debounce counts must be >= 1")


@dataclass
class FaultReport:
    status: FaultStatus = FaultStatus.NOMINAL
    t_detect: float | None = None
    t_isolate: float | None = None
    residual_evidence: dict[str, float] = field(default_factory=dict)
    chattering_evidence: dict[str, float] = field(default_factory=dict)


@dataclass
class FdiHistory:
    residual_run: int = 0
    chatter_run: int = 0
    chatter_trips: list = field(default_factory=list)
    windows_since_detect: int = 0
    anomaly_start: float | None = None
    chatter_peak: np.ndarray = field(default_factory=lambda: np.zeros(4))


def classify(r, ch, th: FdiThresholds, history: FdiHistory, report: FaultReport,
             t: float, window_len: float) -> FaultReport:
    """Advance the FDI state machine by one estimator step.

    ``r`` is the completed residual vector on window boundaries and None in
    between; ``ch`` is the current chattering vector (None until enough gain
    history exists).  Status only ever moves forward.
    """
    if t < th.warmup - 1e-12:
        return report
    if report.status.isolated:
        return report

    if ch is not None:
        ch = np.abs(np.asarray(ch))
        over = ch > np.asarray(th.chattering)
        history.chatter_run = history.chatter_run + 1 if over.any() else 0
        if over.any():
            history.chatter_peak = np.maximum(history.chatter_peak, ch)
        if history.chatter_run == th.debounce:
            history.chatter_trips.append((t, ch.copy()))

    if r is not None:
        r = np.asarray(r)
        over = r > np.asarray(th.residual)
        history.residual_run = history.residual_run + 1 if over.any() else 0
        if report.status is FaultStatus.NOMINAL and history.residual_run >= th.residual_debounce:
            report.status = FaultStatus.ANOMALY
            report.t_detect = t
            history.anomaly_start = t - window_len * th.residual_debounce
            history.windows_since_detect = 0
            report.residual_evidence = {STATE_NAMES[i]: float(r[i]) for i in np.flatnonzero(over)}
        elif report.status is FaultStatus.ANOMALY:
            history.windows_since_detect += 1

    if report.status is FaultStatus.ANOMALY:
        trips = [(tt, c) for tt, c in history.chatter_trips if tt >= history.anomaly_start]
        if trips:
            _, c = trips[0]
            report.status = FaultStatus.IMU_FAULT
            report.t_isolate = t
            report.chattering_evidence = {n: float(v) for n, v, lim
                                          in zip(CHATTER_NAMES, c, th.chattering) if v > lim}
        elif history.windows_since_detect >= th.confirm_windows:
            report.status = FaultStatus.POSITION_FAULT
            report.t_isolate = t
            report.chattering_evidence = {n: float(v) for n, v in zip(CHATTER_NAMES, history.chatter_peak)}
    return report


class FaultDetector:
    """Stateful wrapper around :func:`classify` for one simulation."""

    def __init__(self, thresholds: FdiThresholds, window_len: float):
        self.th = thresholds
        self.window_len = window_len
        self.history = FdiHistory()
        self.report = FaultReport()

    def update(self, t: float, r=None, ch=None) -> FaultReport:
        return classify(r, ch, self.th, self.history, self.report, t, self.window_len)


def isolation_mask(report: FaultReport) -> dict[ChannelId, bool]:
    if report.status is FaultStatus.IMU_FAULT:
        return {c: c not in IMU_CHANNELS for c in CHANNELS}
    if report.status is FaultStatus.POSITION_FAULT:
        return {c: c is not ChannelId.POSITION for c in CHANNELS}
    raise InvalidState(f"no isolation defined for status {report.status.value}")
