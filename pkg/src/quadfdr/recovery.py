"""Roll/pitch reconstruction from position and heading.

The rotor thrust is perpendicular to the rotor disk, so the direction of the
non-gravitational acceleration fixes the tilt of body z.  Given the compass
heading, rotating that direction into the heading-aligned frame separates
pitch from roll.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np


class DegenerateThrust(ValueError):
    """|T| too small for a meaningful direction (near free fall)."""


class SingularThrust(ValueError):
    """Thrust direction lies in the horizontal plane (lambda ~ 0)."""


# least-squares quadratic fit over five equally spaced samples, evaluated at
# the centre sample: P_ddot ~ sum(w_i P_i) / h^2
FIVE_POINT_ACCEL = np.array([2.0, -1.0, -2.0, -1.0, 2.0]) / 7.0


@dataclass(frozen=True)
class ThrustDir:
    t_vec: np.ndarray
    quality: float


@dataclass(frozen=True)
class RecoveredAttitude:
    phi_bar: float
    theta_bar: float
    valid: bool
    t_stamp: float


def _lambda(t_vec, psi: float) -> float:
    t1, t2, t3 = t_vec
    return float(np.sqrt(t3 * t3 + (t1 * np.cos(psi) + t2 * np.sin(psi)) ** 2))


def thrust_direction(acc: np.ndarray, m: float, g_mag: float, psi: float = 0.0) -> ThrustDir:
    T = m * np.asarray(acc, dtype=float) + np.array([0.0, 0.0, m * g_mag])
    nT = float(np.linalg.norm(T))
    if nT < 0.1 * m * g_mag:
        raise DegenerateThrust(f"|T| = {nT:.3g} N below 10% of hover thrust")
    t_vec = T / nT
    return ThrustDir(t_vec, _lambda(t_vec, psi))


class ThrustDirectionEstimator:
    """Streaming P_ddot estimate: five-point stencil then single-pole low-pass."""

    def __init__(self, m: float, g_mag: float, sample_dt: float = 0.02,
                 cutoff_hz: float = 8.0):
        self.m = m
        self.g_mag = g_mag
        self.h = sample_dt
        self.alpha = float(np.exp(-2.0 * np.pi * cutoff_hz * sample_dt))
        self._buf: deque = deque(maxlen=5)
        self._acc = None

    def push(self, P) -> np.ndarray | None:
        """Add one position sample; returns the smoothed acceleration once primed."""
        self._buf.append(np.asarray(P, dtype=float))
        if len(self._buf) < 5:
            return None
        raw = FIVE_POINT_ACCEL @ np.asarray(self._buf) / (self.h * self.h)
        if self._acc is None:
            self._acc = raw
        else:
            self._acc = self.alpha * self._acc + (1.0 - self.alpha) * raw
        return self._acc.copy()

    def direction(self, psi: float = 0.0) -> ThrustDir:
        if self._acc is None:
            raise DegenerateThrust("fewer than five position samples")
        return thrust_direction(self._acc, self.m, self.g_mag, psi)


def thrust_dir_from_position(samples, m: float, g_mag: float, sample_dt: float = 0.02,
                             cutoff_hz: float = 8.0, psi: float = 0.0) -> ThrustDir:
    """Thrust direction at the centre of the newest five-sample stencil."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[1] != 3 or len(samples) < 5:
        raise ValueError("need at least five 3-D position samples")
    est = ThrustDirectionEstimator(m, g_mag, sample_dt, cutoff_hz)
    for P in samples:
        est.push(P)
    return est.direction(psi)


def recover_attitude(t_vec, psi: float, t_stamp: float = 0.0) -> RecoveredAttitude:
    """Roll and pitch whose Z-Y-X rotation with heading psi tilts body z onto t_vec.

    Roll follows the right-handed body-x convention of ``R_from_euler_zyx``,
    so its sine is ``t1*sin(psi) - t2*cos(psi)``.
    """
    if isinstance(t_vec, ThrustDir):
        t_vec = t_vec.t_vec
    t1, t2, t3 = np.asarray(t_vec, dtype=float)
    cp, sp = np.cos(psi), np.sin(psi)
    lam = np.sqrt(t3 * t3 + (t1 * cp + t2 * sp) ** 2)
    if lam <= 1e-6:
        raise SingularThrust(f"lambda = {lam:.3g}")
    c_theta = t3 / lam
    s_theta = (t1 * cp + t2 * sp) / lam
    c_phi = lam
    s_phi = t1 * sp - t2 * cp
    return RecoveredAttitude(float(np.arctan2(s_phi, c_phi)), float(np.arctan2(s_theta, c_theta)),
                             True, t_stamp)


class RecoveryStream:
    """Recovered attitude at every fresh position sample (50 Hz).

    Emits nothing while position is unusable; emits ``valid=False`` samples
    while the thrust direction is degenerate or singular.
    """

    def __init__(self, m: float, g_mag: float, sample_dt: float = 0.02, cutoff_hz: float = 8.0):
        self.est = ThrustDirectionEstimator(m, g_mag, sample_dt, cutoff_hz)
        self.psi = 0.0
        self.latest: RecoveredAttitude | None = None

    def update(self, t: float, position=None, psi=None) -> RecoveredAttitude | None:
        if psi is not None:
            self.psi = float(psi)
        if position is None:
            return None
        if self.est.push(position) is None:
            return None
        try:
            td = self.est.direction(self.psi)
            out = recover_attitude(td.t_vec, self.psi, t)
        except (DegenerateThrust, SingularThrust):
            out = RecoveredAttitude(np.nan, np.nan, False, t)
        self.latest = out
        return out
