"""Closed-loop simulation of one scenario on the 1 ms base tick."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import dynamics as dyn
from .config import ScenarioConfig
from .control import CascadeController, ControlMode, Setpoint
from .estimator import (CHATTER_NAMES, CalibrationResult, ModelParams, ResidualWindow, SVSF,
                        VelocityFromPosition, assemble_measurement, calibrate_params,
                        run_estimator)
from .fdi import STATE_NAMES, FaultDetector, FaultStatus, isolation_mask
from .recovery import RecoveryStream
from .sensors import (BASE_DT, CHANNELS, IMU_CHANNELS, ChannelId, SensorSuite, apply_isolation)

CRASH_TILT = np.deg2rad(75.0)


def _columns() -> list[str]:
    cols = ["time"]
    cols += [f"true_{n}" for n in STATE_NAMES]
    cols += ["gyro_p", "gyro_q", "gyro_r", "accel_x", "accel_y", "accel_z",
             "fused_phi", "fused_theta", "compass_psi", "pos_x", "pos_y", "pos_z",
             "synth_vx", "synth_vy", "synth_vz"]
    cols += [f"fresh_{c.value}" for c in CHANNELS]
    cols += [f"valid_{c.value}" for c in CHANNELS]
    cols += [f"xhat_{n}" for n in STATE_NAMES]
    cols += [f"eprior_{n}" for n in STATE_NAMES]
    cols += [f"epost_{n}" for n in STATE_NAMES]
    cols += [f"K_{n}" for n in STATE_NAMES]
    cols += [f"res_{n}" for n in STATE_NAMES]
    cols += [f"ch_{n}" for n in CHATTER_NAMES]
    cols += ["fdi_status", "ctrl_mode", "u1", "u2", "u3", "u4", "f_z", "tau_x", "tau_y", "tau_z",
             "ref_x", "ref_y", "ref_z", "rec_phi", "rec_theta", "rec_valid"]
    return cols


COLUMNS = _columns()
COL = {name: i for i, name in enumerate(COLUMNS)}


@dataclass
class FlightLog:
    data: np.ndarray
    columns: list[str] = field(default_factory=lambda: list(COLUMNS))
    events: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self._idx = {name: i for i, name in enumerate(self.columns)}

    def __len__(self):
        return len(self.data)

    def col(self, name: str) -> np.ndarray:
        return self.data[:, self._idx[name]]

    def cols(self, prefix: str, names=STATE_NAMES) -> np.ndarray:
        return self.data[:, [self._idx[f"{prefix}_{n}"] for n in names]]

    @property
    def t(self) -> np.ndarray:
        return self.col("time")

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.data:
                fh.write(",".join(_fmt(v) for v in row) + "\n")

    @classmethod
    def read_csv(cls, path) -> "FlightLog":
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data, header)

    def measurement_arrays(self, u0=None):
        """(z, mask, u_applied) per tick, as consumed by the estimator.

        ``u0`` is the input applied before the first tick (hover by default in
        :func:`run_scenario`); without it the first logged command is reused.
        """
        z = np.column_stack([self.cols("pos", ("x", "y", "z")),
                             self.cols("synth", ("vx", "vy", "vz")),
                             self.col("fused_phi"), self.col("fused_theta"),
                             self.col("compass_psi"),
                             self.cols("gyro", ("p", "q", "r"))])
        usable = {c: (self.col(f"fresh_{c.value}") > 0) & (self.col(f"valid_{c.value}") > 0)
                  for c in CHANNELS}
        mask = np.column_stack([usable[ChannelId.POSITION]] * 6
                               + [usable[ChannelId.FUSED_ATTITUDE]] * 2
                               + [usable[ChannelId.COMPASS]]
                               + [usable[ChannelId.GYRO]] * 3)
        u = self.data[:, [self._idx[f"u{i}"] for i in range(1, 5)]]
        first = u[:1] if u0 is None else np.asarray(u0, dtype=float).reshape(1, 4)
        u_applied = np.vstack([first, u[:-1]])
        return z, mask, u_applied


def _fmt(v: float) -> str:
    if v != v:
        return "nan"
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


@dataclass
class RunSummary:
    name: str
    seed: int
    duration: float
    crashed: bool = False
    crash_time: float | None = None
    crash_reason: str | None = None
    position_rmse: float = 0.0
    max_excursion: float = 0.0
    max_excursion_after_attack: float = 0.0
    attack_onset: float | None = None
    attack_class: str = "none"
    final_status: str = FaultStatus.NOMINAL.value
    t_detect: float | None = None
    t_isolate: float | None = None
    detection_latency: float | None = None
    isolation_latency: float | None = None
    misisolation: bool = False
    false_alarm: bool = False
    chattering_peak: dict[str, float] = field(default_factory=dict)
    chattering_peak_pre_isolation: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def attack_class(cfg: ScenarioConfig) -> str:
    chans = {a.channel for a in cfg.attacks}
    if not chans:
        return "none"
    if chans <= set(IMU_CHANNELS):
        return "imu"
    if chans == {ChannelId.POSITION}:
        return "position"
    return "mixed"


def _truth12(state: dyn.VehicleState) -> np.ndarray:
    phi, theta, psi = dyn.euler_zyx_from_R(state.R)
    return np.concatenate([state.P, state.V, [phi, theta, psi], state.omega_b])


def _tilt(R: np.ndarray) -> tuple[float, float]:
    theta = float(np.arcsin(np.clip(-R[2, 0], -1.0, 1.0)))
    phi = float(np.arctan2(R[2, 1], R[2, 2]))
    return phi, theta


def run_scenario(cfg: ScenarioConfig, keep_log: bool = True):
    """Simulate one scenario; returns (FlightLog, RunSummary)."""
    params = cfg.vehicle
    n_ticks = int(round(cfg.duration / BASE_DT))
    wp0 = cfg.setpoint_at(0.0)
    state = dyn.VehicleState(P=np.array(cfg.initial_position, dtype=float),
                             R=dyn.R_from_euler_zyx(0.0, 0.0, wp0.psi_ref))
    suite = SensorSuite(cfg.seed, cfg.noise, cfg.attacks, cfg.transport_delay, cfg.fusion_blend)
    mp = ModelParams.from_vehicle(params).scaled(**cfg.estimator.model_scale)
    est = SVSF(_truth12(state), mp, gamma=cfg.estimator.gamma,
               chatter_window=cfg.estimator.chatter_window)
    velsynth = VelocityFromPosition(cfg.estimator.velocity_cutoff_hz)
    residual = ResidualWindow(cfg.estimator.window)
    detector = FaultDetector(cfg.fdi, cfg.estimator.window * BASE_DT)
    recovery = RecoveryStream(params.m, params.g_mag, cutoff_hz=cfg.recovery_cutoff_hz)
    ctrl = CascadeController(params, cfg.gains, fr_enabled=cfg.fr_enabled)

    mask = {c: True for c in CHANNELS}
    velocity = np.zeros(3)
    z_prev = _truth12(state)
    u_applied = np.full(4, params.hover_voltage)
    data = np.full((n_ticks, len(COLUMNS)), np.nan)
    events: list[dict] = []
    status_prev = FaultStatus.NOMINAL
    crash_time = crash_reason = None
    rows = 0
    ch_pre_iso = np.zeros(4)
    ch_peak = np.zeros(4)

    for k in range(n_ticks):
        t = k * BASE_DT
        wp = cfg.setpoint_at(t)
        sp = Setpoint(np.array(wp.P_ref, dtype=float), wp.psi_ref)
        f_z = float(dyn.allocation_matrix(params)[0] @ u_applied)
        frame = suite.step(k, state, np.array([0.0, 0.0, f_z / params.m]))
        frame = apply_isolation(frame, mask)
        if frame.usable(ChannelId.POSITION):
            velocity = velsynth.update(frame.values[ChannelId.POSITION])
        z, zmask = assemble_measurement(frame, velocity, z_prev)
        z_prev = z
        rec = est.step(u_applied, z, zmask)
        r = residual.update(z, rec.x_prior, zmask)
        ch = est.chattering() if len(est.state.K_hist) > est.chatter_window else None
        if ch is not None and t >= cfg.fdi.warmup:
            ch_peak = np.maximum(ch_peak, ch)
            if not detector.report.status.isolated:
                ch_pre_iso = np.maximum(ch_pre_iso, ch)

        if cfg.fdi_enabled:
            report = detector.update(t, r, ch)
            if report.status is not status_prev:
                events.append({"t": t, "status": report.status.value})
                if report.status.isolated:
                    mask = isolation_mask(report)
                    ctrl.set_mode(report, est.x_hat)
                status_prev = report.status

        psi = frame.values[ChannelId.COMPASS][0] if frame.usable(ChannelId.COMPASS) else None
        pos = frame.values[ChannelId.POSITION] if frame.usable(ChannelId.POSITION) else None
        rec_att = recovery.update(t, pos, psi)

        u = ctrl.update(k, frame, velocity, sp, recovered=rec_att, x_hat=est.x_hat,
                        att_offset=cfg.excitation.offset(t))

        if keep_log:
            row = data[k]
            row[0] = t
            row[1:13] = _truth12(state)
            i = 13
            row[i:i + 3] = frame.values[ChannelId.GYRO]
            row[i + 3:i + 6] = frame.values[ChannelId.ACCEL]
            row[i + 6:i + 8] = frame.values[ChannelId.FUSED_ATTITUDE]
            row[i + 8] = frame.values[ChannelId.COMPASS][0]
            row[i + 9:i + 12] = frame.values[ChannelId.POSITION]
            row[i + 12:i + 15] = velocity
            i += 15
            row[i:i + 5] = [frame.fresh[c] for c in CHANNELS]
            row[i + 5:i + 10] = [frame.valid[c] for c in CHANNELS]
            i += 10
            row[i:i + 12] = rec.x_post
            row[i + 12:i + 24] = rec.e_prior
            row[i + 24:i + 36] = rec.e_post
            row[i + 36:i + 48] = rec.K
            if r is not None:
                row[i + 48:i + 60] = r
            i += 60
            if ch is not None:
                row[i:i + 4] = ch
            i += 4
            row[i] = detector.report.status.code
            row[i + 1] = ctrl.mode.code
            row[i + 2:i + 6] = u
            row[i + 6] = ctrl.f_z
            row[i + 7:i + 10] = ctrl.tau
            row[i + 10:i + 13] = sp.P_ref
            if rec_att is not None:
                row[i + 13] = rec_att.phi_bar
                row[i + 14] = rec_att.theta_bar
                row[i + 15] = float(rec_att.valid)
        else:
            data[k, 0] = t
            data[k, 1:4] = state.P
            data[k, COL["ref_x"]:COL["ref_z"] + 1] = sp.P_ref
        rows = k + 1

        try:
            state = dyn.step(state, u, BASE_DT, params)
        except dyn.NonFiniteState:
            crash_time, crash_reason = t + BASE_DT, "non-finite state"
            break
        u_applied = np.array(u, dtype=float)
        phi, theta = _tilt(state.R)
        if abs(phi) > CRASH_TILT or abs(theta) > CRASH_TILT:
            crash_time, crash_reason = (k + 1) * BASE_DT, "tilt beyond 75 deg"
        elif state.P[2] < 0.0:
            crash_time, crash_reason = (k + 1) * BASE_DT, "ground contact"
        if crash_time is not None:
            break

    data = data[:rows]
    log = FlightLog(data, list(COLUMNS), events)
    if crash_time is not None:
        events.append({"t": crash_time, "crash": crash_reason})
    summary = summarize(cfg, log, crash_time, crash_reason, detector, ch_peak, ch_pre_iso)
    return log, summary


def summarize(cfg: ScenarioConfig, log: FlightLog, crash_time, crash_reason, detector,
              ch_peak, ch_pre_iso) -> RunSummary:
    P = log.data[:, 1:4]
    ref = log.data[:, COL["ref_x"]:COL["ref_z"] + 1]
    err = P - ref
    s = RunSummary(cfg.name, int(cfg.seed), cfg.duration)
    s.crashed = crash_time is not None
    s.crash_time = crash_time
    s.crash_reason = crash_reason
    s.position_rmse = float(np.sqrt(np.mean(np.sum(err ** 2, axis=1))))
    horiz = np.hypot(err[:, 0], err[:, 1])
    s.max_excursion = float(horiz.max())
    s.attack_class = attack_class(cfg)
    if cfg.attacks:
        s.attack_onset = min(a.t_start for a in cfg.attacks)
        after = log.t >= s.attack_onset
        s.max_excursion_after_attack = float(horiz[after].max()) if after.any() else 0.0
    rep = detector.report
    s.final_status = rep.status.value
    s.t_detect, s.t_isolate = rep.t_detect, rep.t_isolate
    if s.attack_onset is not None:
        if rep.t_detect is not None:
            s.detection_latency = rep.t_detect - s.attack_onset
        if rep.t_isolate is not None:
            s.isolation_latency = rep.t_isolate - s.attack_onset
    expected = {"imu": FaultStatus.IMU_FAULT, "position": FaultStatus.POSITION_FAULT}
    if rep.status.isolated and s.attack_class in expected:
        s.misisolation = rep.status is not expected[s.attack_class]
    if s.attack_class == "none" and rep.status is not FaultStatus.NOMINAL:
        s.false_alarm = True
    s.chattering_peak = {n: float(v) for n, v in zip(CHATTER_NAMES, ch_peak)}
    s.chattering_peak_pre_isolation = {n: float(v) for n, v in zip(CHATTER_NAMES, ch_pre_iso)}
    return s


def replay_estimator(log: FlightLog, cfg: ScenarioConfig, mp: ModelParams | None = None) -> dict:
    """Re-run the filter over a logged flight, optionally with other parameters.

    With the scenario's own parameters the replay reproduces the logged
    estimator columns bit for bit.
    """
    params = cfg.vehicle
    if mp is None:
        mp = ModelParams.from_vehicle(params).scaled(**cfg.estimator.model_scale)
    wp0 = cfg.setpoint_at(0.0)
    x0 = np.concatenate([np.asarray(cfg.initial_position, dtype=float), np.zeros(3),
                         [0.0, 0.0, wp0.psi_ref], np.zeros(3)])
    z, mask, u = log.measurement_arrays(u0=np.full(4, params.hover_voltage))
    return run_estimator(x0, z, mask, u, mp, gamma=cfg.estimator.gamma,
                         chatter_window=cfg.estimator.chatter_window)


def calibrate_from_log(log: FlightLog, cfg: ScenarioConfig, t_start: float, t_stop: float,
                       **kwargs) -> CalibrationResult:
    """Fit the estimator's grouped parameters on the log segment [t_start, t_stop)."""
    mp = ModelParams.from_vehicle(cfg.vehicle).scaled(**cfg.estimator.model_scale)
    rep = replay_estimator(log, cfg, mp)
    seg = (log.t >= t_start - 1e-9) & (log.t < t_stop - 1e-9)
    return calibrate_params(rep["e_prior"][seg], rep["corrected"][seg], rep["reg"][seg], mp,
                            reg_end=rep["reg_end"][seg], **kwargs)
