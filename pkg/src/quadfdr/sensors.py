"""Multi-rate onboard sensors, transport delay and signal-level attacks.

All channels are sampled on a 1 ms base tick.  A channel with rate ``f`` is
due at tick ``k`` when ``floor(k*f/1000)`` increments, which gives exactly
``f`` samples per second (400 Hz alternates 3/2 ms spacing).
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .dynamics import VehicleState, euler_zyx_from_R

BASE_RATE_HZ = 1000
BASE_DT = 1.0 / BASE_RATE_HZ


class ChannelId(str, enum.Enum):
    ACCEL = "accel"
    GYRO = "gyro"
    FUSED_ATTITUDE = "fused_attitude"
    COMPASS = "compass"
    POSITION = "position"

    @property
    def rate_hz(self) -> int:
        return _RATES[self]

    @property
    def dim(self) -> int:
        return _DIMS[self]


_RATES = {
    ChannelId.ACCEL: 1000,
    ChannelId.GYRO: 1000,
    ChannelId.FUSED_ATTITUDE: 400,
    ChannelId.COMPASS: 100,
    ChannelId.POSITION: 50,
}
_DIMS = {
    ChannelId.ACCEL: 3,
    ChannelId.GYRO: 3,
    ChannelId.FUSED_ATTITUDE: 2,
    ChannelId.COMPASS: 1,
    ChannelId.POSITION: 3,
}
CHANNELS = tuple(ChannelId)
IMU_CHANNELS = (ChannelId.GYRO, ChannelId.ACCEL, ChannelId.FUSED_ATTITUDE)


def is_due(channel: ChannelId, tick: int) -> bool:
    if tick == 0:
        return True
    f = channel.rate_hz
    return (tick * f) // BASE_RATE_HZ > ((tick - 1) * f) // BASE_RATE_HZ


def sample_index(channel: ChannelId, tick: int) -> int:
    return (tick * channel.rate_hz) // BASE_RATE_HZ


@dataclass
class NoiseConfig:
    """Gaussian noise standard deviations per channel (channel units)."""

    gyro: float = 0.005
    accel: float = 0.05
    fused_attitude: float = 0.002
    compass: float = 0.01
    position: float = 1.0e-4

    def std(self, channel: ChannelId) -> float:
        return getattr(self, channel.value)

    @classmethod
    def zero(cls) -> "NoiseConfig":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)


class NoiseSource:
    """Reproducible per-channel standard-normal streams.

    Sample ``i`` of a channel depends only on (seed, channel, i): each channel
    draws from its own generator in fixed-size blocks, so access order does
    not matter.
    """

    _BLOCK = 4096

    def __init__(self, seed: int):
        self.seed = int(seed)
        children = np.random.SeedSequence(self.seed).spawn(len(CHANNELS))
        self._rngs = {c: np.random.default_rng(s) for c, s in zip(CHANNELS, children)}
        self._buf = {c: np.empty((0, c.dim)) for c in CHANNELS}

    def draw(self, channel: ChannelId, index: int) -> np.ndarray:
        buf = self._buf[channel]
        while index >= len(buf):
            blk = self._rngs[channel].standard_normal((self._BLOCK, channel.dim))
            buf = np.vstack([buf, blk])
        self._buf[channel] = buf
        return buf[index]


class AttackKind(str, enum.Enum):
    ADDITIVE_BIAS = "additive_bias"
    RESONANT_ALIAS = "resonant_alias"


@dataclass
class AttackSpec:
    """Signal-level corruption of one channel over [t_start, t_stop).

    ``component`` selects one axis of the channel; ``None`` corrupts every
    axis with the same waveform.  ``sign`` lets a bias push either way while
    ``amplitude`` stays non-negative.
    """

    channel: ChannelId
    kind: AttackKind
    amplitude: float
    t_start: float
    t_stop: float
    component: int | None = None
    frequencies: tuple[float, ...] = ()
    sign: float = 1.0

    def __post_init__(self):
        self.channel = ChannelId(self.channel)
        self.kind = AttackKind(self.kind)
        self.frequencies = tuple(float(f) for f in self.frequencies)
        if not self.t_start < self.t_stop:
            raise ValueError("attack window needs t_start < t_stop")
        if self.amplitude < 0:
            raise ValueError("attack amplitude must be >= 0")
        if self.kind is AttackKind.RESONANT_ALIAS and not self.frequencies:
            raise ValueError("resonant_alias attack needs at least one frequency")
        if self.component is not None and not 0 <= self.component < self.channel.dim:
            raise ValueError(f"component {self.component} out of range for {self.channel.value}")

    def active(self, t: float) -> bool:
        return self.t_start <= t < self.t_stop

    def offset(self, t: float) -> float:
        """Scalar corruption added to each targeted component at time t."""
        if not self.active(t):
            return 0.0
        if self.kind is AttackKind.ADDITIVE_BIAS:
            return self.sign * self.amplitude
        tau = t - self.t_start
        # averaged so the envelope peak equals amplitude (peak-to-peak 2*amplitude)
        s = sum(np.sin(2.0 * np.pi * f * tau) for f in self.frequencies)
        return self.sign * self.amplitude * s / len(self.frequencies)

    def vector(self, t: float) -> np.ndarray:
        out = np.zeros(self.channel.dim)
        off = self.offset(t)
        if off == 0.0:
            return out
        if self.component is None:
            out[:] = off
        else:
            out[self.component] = off
        return out


def attack_offset(channel: ChannelId, t: float, attacks) -> np.ndarray:
    out = np.zeros(channel.dim)
    for a in attacks:
        if a.channel is channel and a.active(t):
            out += a.vector(t)
    return out


def ground_truth(channel: ChannelId, state: VehicleState, specific_force: np.ndarray) -> np.ndarray:
    if channel is ChannelId.GYRO:
        return state.omega_b.copy()
    if channel is ChannelId.ACCEL:
        return np.asarray(specific_force, dtype=float).copy()
    if channel is ChannelId.POSITION:
        return state.P.copy()
    phi, theta, psi = euler_zyx_from_R(state.R)
    if channel is ChannelId.FUSED_ATTITUDE:
        return np.array([phi, theta])
    return np.array([psi])


def sample(state: VehicleState, tick: int, noise: NoiseSource, noise_cfg: NoiseConfig,
           attacks=(), specific_force=None) -> dict[ChannelId, np.ndarray]:
    """Raw readings of every channel due at ``tick`` (no delay, no fusion).

    ``specific_force`` is the body-frame non-gravitational acceleration
    ``R^T (P_ddot - g)``; for this airframe it equals ``[0, 0, f_z/m]``.
    """
    t = tick * BASE_DT
    if specific_force is None:
        specific_force = np.zeros(3)
    out = {}
    for ch in CHANNELS:
        if not is_due(ch, tick):
            continue
        val = ground_truth(ch, state, specific_force)
        std = noise_cfg.std(ch)
        if std > 0.0:
            val = val + std * noise.draw(ch, sample_index(ch, tick))
        val = val + attack_offset(ch, t, attacks)
        out[ch] = val
    return out


class DelayLine:
    """Fixed transport delay in whole base ticks."""

    def __init__(self, delay_ticks: int):
        if delay_ticks < 0:
            raise ValueError("delay must be >= 0")
        self.delay_ticks = int(delay_ticks)
        self._queue: deque = deque()

    @classmethod
    def from_seconds(cls, delay: float) -> "DelayLine":
        ticks = round(delay / BASE_DT)
        if abs(ticks * BASE_DT - delay) > 1e-9:
            raise ValueError(f"delay {delay} s is not a multiple of the {BASE_DT} s tick")
        return cls(ticks)

    def push(self, tick: int, value) -> None:
        self._queue.append((tick + self.delay_ticks, value))

    def pop(self, tick: int):
        """Newest value whose release tick has arrived, or None."""
        out = None
        while self._queue and self._queue[0][0] <= tick:
            out = self._queue.popleft()[1]
        return out


def delay_stream(stream, delay_ticks: int):
    """Delay a list of (tick, value) pairs; returns the consumer-side list."""
    line = DelayLine(delay_ticks)
    out = []
    ticks = sorted({t for t, _ in stream} | {t + delay_ticks for t, _ in stream})
    pending = dict()
    for t, v in stream:
        pending.setdefault(t, []).append(v)
    for t in ticks:
        for v in pending.get(t, []):
            line.push(t, v)
        v = line.pop(t)
        if v is not None:
            out.append((t, v))
    return out


@dataclass
class SensorFrame:
    t: float
    values: dict[ChannelId, np.ndarray]
    fresh: dict[ChannelId, bool]
    valid: dict[ChannelId, bool] = field(default_factory=lambda: {c: True for c in CHANNELS})

    def usable(self, channel: ChannelId) -> bool:
        return self.fresh[channel] and self.valid[channel]


def apply_isolation(frame: SensorFrame, mask: dict[ChannelId, bool]) -> SensorFrame:
    valid = {c: frame.valid[c] and mask.get(c, True) for c in CHANNELS}
    return SensorFrame(frame.t, frame.values, frame.fresh, valid)


def _tilt_from_accel(a: np.ndarray) -> np.ndarray:
    roll = np.arctan2(a[1], a[2])
    pitch = np.arctan2(-a[0], np.hypot(a[1], a[2]))
    return np.array([roll, pitch])


class SensorSuite:
    """Stateful sensor front-end used by the simulation loop.

    Adds the two pieces that are not a pure function of the instantaneous
    state: the fused-attitude corruption under IMU attack and the position
    transport delay.  ``fusion_blend`` is the complementary-filter weight on
    the gyro-propagated estimate at each 400 Hz fusion update.
    """

    def __init__(self, seed: int, noise_cfg: NoiseConfig, attacks=(),
                 transport_delay: float = 0.025, fusion_blend: float = 0.98):
        self.noise = NoiseSource(seed)
        self.noise_cfg = noise_cfg
        self.attacks = list(attacks)
        self.delay = DelayLine.from_seconds(transport_delay)
        self.fusion_blend = fusion_blend
        self._fusion_err = np.zeros(2)
        self._last_fusion_t = 0.0
        self._gyro_err = np.zeros(3)
        self._tilt_err = np.zeros(2)
        self._held = {c: np.zeros(c.dim) for c in CHANNELS}
        self._has_position = False

    def step(self, tick: int, state: VehicleState, specific_force: np.ndarray) -> SensorFrame:
        t = tick * BASE_DT
        raw = sample(state, tick, self.noise, self.noise_cfg, self.attacks, specific_force)
        fresh = {c: False for c in CHANNELS}

        if ChannelId.GYRO in raw:
            self._gyro_err = attack_offset(ChannelId.GYRO, t, self.attacks)
        if ChannelId.ACCEL in raw:
            acc_err = attack_offset(ChannelId.ACCEL, t, self.attacks)
            if np.any(acc_err):
                self._tilt_err = (_tilt_from_accel(specific_force + acc_err)
                                  - _tilt_from_accel(specific_force))
            else:
                self._tilt_err = np.zeros(2)

        for ch, val in raw.items():
            if ch is ChannelId.POSITION:
                self.delay.push(tick, val)
                continue
            if ch is ChannelId.FUSED_ATTITUDE:
                h = t - self._last_fusion_t
                self._last_fusion_t = t
                a = self.fusion_blend
                self._fusion_err = a * (self._fusion_err + h * self._gyro_err[:2]) \
                    + (1.0 - a) * self._tilt_err
                val = val + self._fusion_err
            self._held[ch] = val
            fresh[ch] = True

        pos = self.delay.pop(tick)
        if pos is not None:
            self._held[ChannelId.POSITION] = pos
            self._has_position = True
            fresh[ChannelId.POSITION] = True
        elif not self._has_position:
            # before the first delayed sample arrives nothing is fresh
            self._held[ChannelId.POSITION] = state.P.copy()

        return SensorFrame(t, {c: self._held[c] for c in CHANNELS}, fresh)
