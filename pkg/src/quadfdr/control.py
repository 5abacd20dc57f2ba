"""Position-attitude cascade PD controller with an IMU-free degraded mode.

Normal mode closes the attitude loop at 400 Hz on the fused attitude and the
gyro.  Degraded mode keeps the same PD law with its own gains, but takes
roll and pitch from a torque-driven predictor that is corrected by the
50 Hz attitude recovered from position and heading.  Rates from filtered
differentiation of the recovered attitude remain available by switching
the predictor off.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .dynamics import BodyWrench, VehicleParams, mixer, wrench_from_motors
from .estimator import wrap_angle
from .fdi import FaultReport, FaultStatus
from .recovery import RecoveredAttitude
from .sensors import BASE_DT, ChannelId, SensorFrame


class StaleFeedback(RuntimeError):
    pass


class ControlMode(str, enum.Enum):
    NORMAL = "Normal"
    DEGRADED = "Degraded"
    # IMU rejected with no replacement attitude source: motors cut
    FAILSAFE = "Failsafe"

    @property
    def code(self) -> int:
        return list(ControlMode).index(self)


@dataclass
class ControllerGains:
    """PD gains in acceleration units (m/s^2 per m, rad/s^2 per rad)."""

    pos_kp: tuple[float, float, float] = (2.0, 2.0, 4.0)
    pos_kd: tuple[float, float, float] = (2.2, 2.2, 3.0)
    att_kp: tuple[float, float, float] = (400.0, 400.0, 60.0)
    att_kd: tuple[float, float, float] = (32.0, 32.0, 12.0)
    deg_pos_kp: tuple[float, float, float] = (1.5, 1.5, 3.0)
    deg_pos_kd: tuple[float, float, float] = (2.2, 2.2, 2.5)
    deg_att_kp: tuple[float, float, float] = (300.0, 300.0, 4.0)
    deg_att_kd: tuple[float, float, float] = (24.0, 24.0, 2.0)
    tilt_limit: float = 0.5
    fz_min: float = 0.2
    fz_max: float = 1.8
    rate_filter_hz: float = 5.0
    hold_time: float = 0.2
    # delay-compensated roll/pitch for degraded mode (see AttitudePredictor)
    deg_predictor: bool = True
    deg_feedback_lag: float = 0.077
    deg_observer_gain: tuple[float, float] = (0.3, 3.0)

    def __post_init__(self):
        for name in ("pos_kp", "pos_kd", "att_kp", "att_kd", "deg_pos_kp", "deg_pos_kd",
                     "deg_att_kp", "deg_att_kd"):
            vals = tuple(float(v) for v in getattr(self, name))
            if len(vals) != 3 or min(vals) < 0:
                raise ValueError(f"{name} needs three non-negative gains")
            setattr(self, name, vals)
        if not 0 < self.tilt_limit < np.pi / 2:
            raise ValueError("tilt_limit must lie in (0, pi/2)")


@dataclass
class Setpoint:
    P_ref: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    psi_ref: float = 0.0

    def __post_init__(self):
        self.P_ref = np.asarray(self.P_ref, dtype=float)
        if not (np.all(np.isfinite(self.P_ref)) and np.isfinite(self.psi_ref)):
            raise ValueError("setpoint must be finite")


def position_loop(P, V, sp: Setpoint, kp, kd, params: VehicleParams, gains: ControllerGains):
    """Desired roll, pitch and collective thrust from position/velocity error.

    Returns (phi_d, theta_d, f_z, clamped).
    """
    g = params.g_mag
    a = np.asarray(kp) * (sp.P_ref - np.asarray(P)) - np.asarray(kd) * np.asarray(V)
    vert = max(g + a[2], 0.2 * g)
    cp, sp_ = np.cos(sp.psi_ref), np.sin(sp.psi_ref)
    theta_d = np.arctan2(a[0] * cp + a[1] * sp_, vert)
    phi_d = np.arctan2((a[0] * sp_ - a[1] * cp) * np.cos(theta_d), vert)
    lim = gains.tilt_limit
    clamped = abs(theta_d) > lim or abs(phi_d) > lim
    theta_d = float(np.clip(theta_d, -lim, lim))
    phi_d = float(np.clip(phi_d, -lim, lim))
    f_z = params.m * vert / (np.cos(phi_d) * np.cos(theta_d))
    f_lo, f_hi = gains.fz_min * params.hover_thrust, gains.fz_max * params.hover_thrust
    if not f_lo <= f_z <= f_hi:
        clamped = True
        f_z = float(np.clip(f_z, f_lo, f_hi))
    return phi_d, theta_d, float(f_z), clamped


def attitude_loop(theta_fb, omega_fb, theta_d, kp, kd, params: VehicleParams) -> np.ndarray:
    """Body torque from PD on Euler-angle error with rate damping."""
    err = np.asarray(theta_d, dtype=float) - np.asarray(theta_fb, dtype=float)
    err[2] = wrap_angle(err[2])
    alpha = np.asarray(kp) * err - np.asarray(kd) * np.asarray(omega_fb)
    return params.J_diag * alpha


def mode_switch(report: FaultReport, fr_enabled: bool = True) -> ControlMode:
    if report.status is FaultStatus.IMU_FAULT:
        return ControlMode.DEGRADED if fr_enabled else ControlMode.FAILSAFE
    return ControlMode.NORMAL


class RateFromAngle:
    """Filtered finite-difference rate of an angle stream."""

    def __init__(self, cutoff_hz: float):
        self.cutoff_hz = cutoff_hz
        self._last = None
        self._t = None
        self.rate = np.zeros(3)

    def update(self, t: float, angles) -> np.ndarray:
        angles = np.asarray(angles, dtype=float)
        if self._last is not None and t > self._t:
            h = t - self._t
            raw = (angles - self._last) / h
            raw[2] = wrap_angle(angles[2] - self._last[2]) / h
            a = np.exp(-2.0 * np.pi * self.cutoff_hz * h)
            self.rate = a * self.rate + (1.0 - a) * raw
        self._last, self._t = angles, t
        return self.rate.copy()


class AttitudePredictor:
    """Roll/pitch observer driven by the applied torque, corrected by a lagged angle stream.

    The recovered attitude describes the vehicle ``lag`` seconds ago (transport
    delay, stencil centre and low-pass).  The observer integrates the known
    torque as a small-angle double integrator and compares each recovered
    sample with its own estimate from ``lag`` ago, so feedback is not delayed
    and angular momentum built up while the IMU was being spoofed is known.
    """

    def __init__(self, J_diag, lag: float, gain=(0.3, 3.0), dt: float = BASE_DT):
        self.J = np.asarray(J_diag, dtype=float)[:2]
        self.dt = dt
        self.k_angle, self.k_rate = gain
        self.lag_ticks = max(int(round(lag / dt)), 0)
        self.eta = np.zeros(2)
        self.omega = np.zeros(2)
        self._hist: deque = deque(maxlen=self.lag_ticks + 1)

    def propagate(self, tau) -> None:
        self.omega = self.omega + np.asarray(tau, dtype=float)[:2] / self.J * self.dt
        self.eta = self.eta + self.omega * self.dt
        self._hist.append(self.eta)

    def correct(self, angles) -> None:
        past = self._hist[0] if self._hist else self.eta
        err = np.asarray(angles, dtype=float)[:2] - past
        shift = self.k_angle * err
        self.eta = self.eta + shift
        self.omega = self.omega + self.k_rate * err
        for i in range(len(self._hist)):
            self._hist[i] = self._hist[i] + shift


class CascadeController:
    """Tick-driven controller.

    Every channel read goes through ``frame.usable`` so rejected sensors are
    never consumed.  ``reads`` counts consumed channels for instrumentation.
    """

    def __init__(self, params: VehicleParams, gains: ControllerGains, fr_enabled: bool = True):
        self.params = params
        self.gains = gains
        self.fr_enabled = fr_enabled
        self.mode = ControlMode.NORMAL
        self.position_hold_suspended = False
        self.frozen_ref: Setpoint | None = None
        self.att_d = np.zeros(3)
        self.f_z = params.hover_thrust
        self.tau = np.zeros(3)
        self.u = np.full(4, params.hover_voltage)
        self.saturated = False
        self.tilt_clamped = False
        self._psi = 0.0
        self._psi_t = 0.0
        self._gyro = np.zeros(3)
        self._gyro_t = 0.0
        self._rate = RateFromAngle(gains.rate_filter_hz)
        self._last_valid_rec: RecoveredAttitude | None = None
        self.predictor = AttitudePredictor(params.J_diag, gains.deg_feedback_lag,
                                           gains.deg_observer_gain)
        self.reads = {c: 0 for c in ChannelId}
        self.fb_attitude = np.zeros(3)

    def _read(self, frame: SensorFrame, ch: ChannelId):
        if not frame.valid[ch]:
            raise StaleFeedback(f"attempted read of rejected channel {ch.value}")
        self.reads[ch] += 1
        return frame.values[ch]

    def set_mode(self, report: FaultReport, x_hat=None) -> ControlMode:
        new = mode_switch(report, self.fr_enabled)
        if report.status is FaultStatus.POSITION_FAULT and not self.position_hold_suspended:
            self.position_hold_suspended = True
            ref = np.asarray(x_hat[0:3]) if x_hat is not None else None
            self.frozen_ref = ref
        self.mode = new
        return new

    def update(self, tick: int, frame: SensorFrame, velocity, sp: Setpoint,
               recovered: RecoveredAttitude | None = None, x_hat=None,
               att_offset=None) -> np.ndarray:
        t = tick * BASE_DT
        if self.mode is ControlMode.FAILSAFE:
            self.u = np.zeros(4)
            return self.u
        if recovered is not None and recovered.valid:
            self.predictor.correct((recovered.phi_bar, recovered.theta_bar))
        self._update(t, frame, velocity, sp, recovered, x_hat, att_offset, tick)
        self.predictor.propagate(wrench_from_motors(self.u, self.params).tau)
        return self.u

    def _update(self, t, frame, velocity, sp, recovered, x_hat, att_offset, tick):
        g = self.gains

        if frame.usable(ChannelId.COMPASS):
            self._psi = float(self._read(frame, ChannelId.COMPASS)[0])
            self._psi_t = t
        degraded = self.mode is ControlMode.DEGRADED
        kp_pos = g.deg_pos_kp if degraded else g.pos_kp
        kd_pos = g.deg_pos_kd if degraded else g.pos_kd

        # outer loop at the position rate
        if self.position_hold_suspended:
            if tick % 20 == 0 and x_hat is not None:
                ref = Setpoint(self.frozen_ref, sp.psi_ref)
                self._outer(x_hat[0:3], x_hat[3:6], ref, kp_pos, kd_pos)
        elif frame.usable(ChannelId.POSITION):
            P = self._read(frame, ChannelId.POSITION)
            self._outer(P, velocity, sp, kp_pos, kd_pos)
        att_d = self.att_d if att_offset is None else self.att_d + np.asarray(att_offset)

        if degraded:
            if recovered is not None:
                self._degraded_inner(t, recovered, att_d)
        elif frame.usable(ChannelId.FUSED_ATTITUDE):
            if frame.usable(ChannelId.GYRO):
                self._gyro = self._read(frame, ChannelId.GYRO)
                self._gyro_t = t
            phi, theta = self._read(frame, ChannelId.FUSED_ATTITUDE)
            if t - self._psi_t > 3 * 0.01:
                raise StaleFeedback("compass heading older than three samples")
            if t - self._gyro_t > 3 * BASE_DT:
                raise StaleFeedback("gyro older than three samples")
            self.fb_attitude = np.array([phi, theta, self._psi])
            self.tau = attitude_loop(self.fb_attitude, self._gyro, att_d,
                                     g.att_kp, g.att_kd, self.params)
            self._mix()

    def _outer(self, P, V, sp: Setpoint, kp, kd):
        phi_d, theta_d, f_z, clamped = position_loop(P, V, sp, kp, kd, self.params, self.gains)
        self.att_d = np.array([phi_d, theta_d, sp.psi_ref])
        self.f_z = f_z
        self.tilt_clamped = clamped

    def _degraded_inner(self, t: float, rec: RecoveredAttitude, att_d):
        g = self.gains
        if rec.valid:
            self._last_valid_rec = rec
            fb = np.array([rec.phi_bar, rec.theta_bar, self._psi])
        elif self._last_valid_rec is not None and t - self._last_valid_rec.t_stamp <= g.hold_time:
            fb = np.array([self._last_valid_rec.phi_bar, self._last_valid_rec.theta_bar, self._psi])
        else:
            fb = np.array([0.0, 0.0, self._psi])
        if t - self._psi_t > 3 * 0.01:
            raise StaleFeedback("compass heading older than three samples")
        rate = self._rate.update(t, fb)
        if g.deg_predictor:
            fb[:2] = self.predictor.eta
            rate[:2] = self.predictor.omega
        self.fb_attitude = fb
        self.tau = attitude_loop(fb, rate, att_d, g.deg_att_kp, g.deg_att_kd, self.params)
        self._mix()

    def _mix(self):
        f_z = self.f_z
        self.u, self.saturated = mixer(BodyWrench(f_z, self.tau), self.params)
