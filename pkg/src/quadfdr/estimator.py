"""Smooth variable structure filter over the 12-state Euler-angle model.

State / measurement layout (H = I)::

    0:3  P      inertial position
    3:6  V      inertial velocity (synthetic, from position differences)
    6:9  Theta  roll, pitch (fused attitude), yaw (compass)
    9:12 omega  body rates p, q, r (gyro)

A channel is corrected only on the ticks where its measurement is fresh and
valid; otherwise its corrective gain is zero and the prior is kept.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import VehicleParams, euler_rate_matrix, R_from_euler_zyx
from .sensors import BASE_DT, ChannelId, SensorFrame

N_STATES = 12
# indices of the chattering channels [z_dot, p, q, r] inside the state vector
CHATTER_IDX = np.array([5, 9, 10, 11])
CHATTER_NAMES = ("z_dot", "p", "q", "r")
PSI_IDX = 8

# state slices fed by each sensor channel
CHANNEL_SLICES = {
    ChannelId.POSITION: slice(0, 6),  # position and the velocity derived from it
    ChannelId.FUSED_ATTITUDE: slice(6, 8),
    ChannelId.COMPASS: slice(8, 9),
    ChannelId.GYRO: slice(9, 12),
}


class NonFiniteEstimate(FloatingPointError):
    pass


class InsufficientHistory(ValueError):
    pass


class InsufficientExcitation(ValueError):
    pass


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class ModelParams:
    """Grouped model parameters used by the prediction and by calibration.

    ``J2`` keeps the (Jx - Jz)/Jy definition, so the pitch equation carries
    ``-J2 * p * r``.
    """

    cl_m: float
    cl_jx: float
    cl_jy: float
    cd_jz: float
    J1: float
    J2: float
    J3: float
    arm: float
    g_mag: float

    @classmethod
    def from_vehicle(cls, p: VehicleParams) -> "ModelParams":
        Jx, Jy, Jz = p.J
        return cls(cl_m=p.C_L / p.m, cl_jx=p.C_L / Jx, cl_jy=p.C_L / Jy, cd_jz=p.C_D / Jz,
                   J1=(Jy - Jz) / Jx, J2=(Jx - Jz) / Jy, J3=(Jx - Jy) / Jz,
                   arm=p.arm, g_mag=p.g_mag)

    def scaled(self, **factors: float) -> "ModelParams":
        return replace(self, **{k: getattr(self, k) * f for k, f in factors.items()})

    def shifted(self, **deltas: float) -> "ModelParams":
        return replace(self, **{k: getattr(self, k) + d for k, d in deltas.items()})


# parameter groups of each chattering channel, in regressor-column order
PARAM_GROUPS = {
    "z_dot": ("cl_m",),
    "p": ("J1", "cl_jx"),
    "q": ("J2", "cl_jy"),
    "r": ("J3", "cd_jz"),
}


def input_terms(u) -> np.ndarray:
    """[sum u, l-free roll lever, l-free pitch lever, yaw spin sum]."""
    u1, u2, u3, u4 = u
    return np.array([u1 + u2 + u3 + u4, u1 + u2 - u3 - u4, -u1 + u2 + u3 - u4,
                     u1 - u2 + u3 - u4])


def regressors(x: np.ndarray, u, mp: ModelParams) -> np.ndarray:
    """Per-step regressors of the four chattering channels.

    Columns: [CthetaCphi*sum_u, q*r, tau_x, -p*r, tau_y, p*q, tau_z] where the
    torques are the voltage lever sums (so cl_jx * tau_x is an angular
    acceleration).
    """
    s, lx, ly, lz = input_terms(u)
    phi, theta = x[6], x[7]
    p, q, r = x[9], x[10], x[11]
    return np.array([np.cos(theta) * np.cos(phi) * s,
                     q * r, mp.arm * lx,
                     -p * r, mp.arm * ly,
                     p * q, lz])


def model_derivative(x: np.ndarray, u, mp: ModelParams) -> np.ndarray:
    s, lx, ly, lz = input_terms(u)
    phi, theta, psi = x[6], x[7], x[8]
    p, q, r = x[9], x[10], x[11]
    R = R_from_euler_zyx(phi, theta, psi)
    dx = np.empty(N_STATES)
    dx[0:3] = x[3:6]
    dx[3:6] = mp.cl_m * s * R[:, 2]
    dx[5] -= mp.g_mag
    dx[6:9] = euler_rate_matrix(phi, theta) @ x[9:12]
    dx[9] = mp.J1 * q * r + mp.cl_jx * mp.arm * lx
    dx[10] = -mp.J2 * p * r + mp.cl_jy * mp.arm * ly
    dx[11] = mp.J3 * p * q + mp.cd_jz * lz
    return dx


def predict_state(x_post: np.ndarray, u, mp: ModelParams, dt: float = BASE_DT) -> np.ndarray:
    """Forward-Euler a priori state."""
    with np.errstate(invalid="ignore", over="ignore"):
        x_prior = x_post + dt * model_derivative(x_post, u, mp)
    if not np.all(np.isfinite(x_prior)):
        raise NonFiniteEstimate("non-finite a priori estimate")
    return x_prior


def svsf_gain(e_prior: np.ndarray, e_prev_post: np.ndarray, gamma: float) -> np.ndarray:
    """Corrective gain with H = I and a zero-width layer.

    sgn(0) is taken as +1 so that |e_post| = gamma |e_prev_post| also holds
    when the a priori error vanishes exactly.
    """
    sgn = np.where(e_prior >= 0.0, 1.0, -1.0)
    return (np.abs(e_prior) + gamma * np.abs(e_prev_post)) * sgn


@dataclass
class StepRecord:
    x_prior: np.ndarray
    e_prior: np.ndarray
    K: np.ndarray
    x_post: np.ndarray
    e_post: np.ndarray
    e_prev_post: np.ndarray
    corrected: np.ndarray
    reg: np.ndarray


@dataclass
class EstimatorState:
    x_hat: np.ndarray
    e_post: np.ndarray = field(default_factory=lambda: np.zeros(N_STATES))
    gamma: float = 0.2
    K_hist: deque = field(default_factory=lambda: deque(maxlen=64))
    t_k: int = 0

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")


class SVSF:
    """Predictor-corrector with per-channel measurement freshness."""

    def __init__(self, x0: np.ndarray, mp: ModelParams, gamma: float = 0.2,
                 chatter_window: int = 10, dt: float = BASE_DT):
        self.mp = mp
        self.dt = dt
        self.chatter_window = chatter_window
        self.state = EstimatorState(np.array(x0, dtype=float), gamma=gamma,
                                    K_hist=deque(maxlen=chatter_window + 1))

    @property
    def x_hat(self) -> np.ndarray:
        return self.state.x_hat

    def predict(self, u):
        x_prior = predict_state(self.state.x_hat, u, self.mp, self.dt)
        return x_prior

    def correct(self, x_prior: np.ndarray, z: np.ndarray, mask: np.ndarray):
        st = self.state
        e_prior = np.where(mask, z - x_prior, 0.0)
        e_prior[PSI_IDX] = wrap_angle(e_prior[PSI_IDX])
        K = np.where(mask, svsf_gain(e_prior, st.e_post, st.gamma), 0.0)
        x_post = x_prior + K
        e_new = z - x_post
        e_new[PSI_IDX] = wrap_angle(e_new[PSI_IDX])
        e_post = np.where(mask, e_new, st.e_post)
        return x_post, K, e_prior, e_post

    def step(self, u, z: np.ndarray, mask: np.ndarray) -> StepRecord:
        st = self.state
        reg = regressors(st.x_hat, u, self.mp)
        x_prior = self.predict(u)
        x_post, K, e_prior, e_post = self.correct(x_prior, z, mask)
        rec = StepRecord(x_prior, e_prior, K, x_post, e_post, st.e_post.copy(),
                         np.asarray(mask, dtype=bool).copy(), reg)
        st.x_hat = x_post
        st.e_post = e_post
        st.K_hist.append(K[CHATTER_IDX])
        st.t_k += 1
        return rec

    def chattering(self) -> np.ndarray:
        return chattering_extract(self.state.K_hist, self.chatter_window)


def chattering_extract(K_hist, window: int) -> np.ndarray:
    """Alternating-component amplitude of the corrective gain per channel.

    Half the mean absolute first difference over the last ``window``
    differences; a gain alternating +/-a returns a.
    """
    if len(K_hist) < window + 1:
        raise InsufficientHistory(f"need {window + 1} gain samples, have {len(K_hist)}")
    K = np.asarray(list(K_hist)[-(window + 1):])
    return 0.5 * np.mean(np.abs(np.diff(K, axis=0)), axis=0)


@dataclass
class ResidualWindow:
    """Per-state sum of squared a priori errors over N estimator steps."""

    N: int = 50
    r: np.ndarray = field(default_factory=lambda: np.zeros(N_STATES))
    count: int = 0

    def update(self, z: np.ndarray, z_hat: np.ndarray, mask=None):
        """Accumulate one step; returns the completed r on window boundaries."""
        e = np.asarray(z, dtype=float) - np.asarray(z_hat, dtype=float)
        e[PSI_IDX] = wrap_angle(e[PSI_IDX])
        if mask is not None:
            e = np.where(mask, e, 0.0)
        self.r = self.r + e * e
        self.count += 1
        if self.count >= self.N:
            out = self.r
            self.r = np.zeros(N_STATES)
            self.count = 0
            return out
        return None


def residual_update(win: ResidualWindow, z, z_hat, mask=None):
    return win.update(z, z_hat, mask)


class VelocityFromPosition:
    """Synthetic velocity from successive position samples.

    Backward difference over the sample spacing followed by a single-pole
    low-pass at ``cutoff_hz``.
    """

    def __init__(self, cutoff_hz: float = 10.0, sample_dt: float = 0.02):
        self.sample_dt = sample_dt
        self.alpha = float(np.exp(-2.0 * np.pi * cutoff_hz * sample_dt))
        self._last = None
        self.v = np.zeros(3)

    def update(self, P: np.ndarray) -> np.ndarray:
        if self._last is not None:
            raw = (P - self._last) / self.sample_dt
            self.v = self.alpha * self.v + (1.0 - self.alpha) * raw
        self._last = np.array(P, dtype=float)
        return self.v.copy()


def assemble_measurement(frame: SensorFrame, velocity: np.ndarray,
                         z_prev: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Build (z, correct-mask) from a frame; stale/invalid entries keep z_prev."""
    z = z_prev.copy()
    mask = np.zeros(N_STATES, dtype=bool)
    if frame.usable(ChannelId.POSITION):
        z[0:3] = frame.values[ChannelId.POSITION]
        z[3:6] = velocity
        mask[0:6] = True
    if frame.usable(ChannelId.FUSED_ATTITUDE):
        z[6:8] = frame.values[ChannelId.FUSED_ATTITUDE]
        mask[6:8] = True
    if frame.usable(ChannelId.COMPASS):
        z[8] = frame.values[ChannelId.COMPASS][0]
        mask[8] = True
    if frame.usable(ChannelId.GYRO):
        z[9:12] = frame.values[ChannelId.GYRO]
        mask[9:12] = True
    return z, mask


def run_estimator(x0, zs, masks, us, mp: ModelParams, gamma: float = 0.2,
                  chatter_window: int = 10) -> dict[str, np.ndarray]:
    """Replay the filter over logged measurements.

    ``us[k]`` is the command applied over the interval ending at step k.
    Returns stacked per-step arrays (x_post, e_prior, e_post, K, corrected,
    reg, reg_end, chatter); ``reg_end`` holds the regressors re-evaluated at
    the end of each step with the same input.
    """
    f = SVSF(x0, mp, gamma=gamma, chatter_window=chatter_window)
    n = len(zs)
    out = {k: np.zeros((n, N_STATES)) for k in ("x_post", "e_prior", "e_post", "K")}
    out["corrected"] = np.zeros((n, N_STATES), dtype=bool)
    out["reg"] = np.zeros((n, 7))
    out["reg_end"] = np.zeros((n, 7))
    out["chatter"] = np.full((n, 4), np.nan)
    for k in range(n):
        rec = f.step(us[k], zs[k], masks[k])
        out["x_post"][k] = rec.x_post
        out["e_prior"][k] = rec.e_prior
        out["e_post"][k] = rec.e_post
        out["K"][k] = rec.K
        out["corrected"][k] = rec.corrected
        out["reg"][k] = rec.reg
        out["reg_end"][k] = regressors(rec.x_post, us[k], mp)
        if len(f.state.K_hist) > chatter_window:
            out["chatter"][k] = f.chattering()
    return out


# regressor columns (see regressors()) used by each chattering channel
_REG_COLS = {"z_dot": (0,), "p": (1, 2), "q": (3, 4), "r": (5, 6)}


@dataclass
class CalibrationResult:
    deltas: dict[str, float]
    refined: ModelParams
    condition: dict[str, float]


def _theta(mp: ModelParams) -> np.ndarray:
    # coefficients of the regressor columns in the model derivative
    return np.array([mp.cl_m, mp.J1, mp.cl_jx, mp.J2, mp.cl_jy, mp.J3, mp.cd_jz])


def calibrate_params(e_prior: np.ndarray, corrected: np.ndarray, reg: np.ndarray,
                     mp: ModelParams, dt: float = BASE_DT, block: int = 20,
                     max_condition: float = 1e3, min_duration: float = 2.0,
                     channels=tuple(PARAM_GROUPS), reg_end: np.ndarray | None = None,
                     max_rel_se: float = 0.1) -> CalibrationResult:
    """Least-squares fit of the grouped parameter errors from a priori chattering.

    For each chattering channel the a priori errors between corrections are
    regressed on ``dt * sum(regressors)`` accumulated since the previous
    correction.  Consecutive events are summed into blocks of ``block`` base
    steps, which cancels the differenced measurement noise that dominates
    single-step errors.  Returns the fitted signed deltas (truth minus model)
    and the refined parameters.

    When ``reg_end`` is given the regressors are averaged over each step
    (trapezoid rule) and the model's own left-point integration error is
    removed from the a priori errors.  Without it that error leaks into the
    inertia-ratio terms at the 1e-3 level.

    A fit is rejected as under-excited when the column-scaled condition
    number exceeds ``max_condition`` or when any coefficient's standard error
    exceeds ``max_rel_se`` times max(|nominal|, 1).  The second test catches
    hover segments, where noise alone keeps the columns independent.
    """
    n = len(e_prior)
    e_prior = np.array(e_prior, dtype=float)
    if reg_end is not None:
        trap = 0.5 * (reg + reg_end)
        th = _theta(mp)
        for name, cols in _REG_COLS.items():
            col = CHATTER_IDX[CHATTER_NAMES.index(name)]
            e_prior[:, col] -= dt * ((trap - reg)[:, list(cols)] @ th[list(cols)])
        reg = trap
    if n * dt < min_duration - 1e-9:
        raise ValueError(f"calibration segment of {n * dt:.2f} s is shorter than {min_duration} s")
    deltas: dict[str, float] = {}
    conds: dict[str, float] = {}
    for name in channels:
        col = CHATTER_IDX[CHATTER_NAMES.index(name)]
        cols = _REG_COLS[name]
        ys, Xs = [], []
        acc_y, acc_x = 0.0, np.zeros(len(cols))
        since = np.zeros(len(cols))
        started = False
        block_start = 0
        for k in range(n):
            since += dt * reg[k, list(cols)]
            if not corrected[k, col]:
                continue
            if not started:
                # the first correction closes an interval of unknown length
                started = True
                since[:] = 0.0
                block_start = k
                continue
            acc_y += e_prior[k, col]
            acc_x += since
            since[:] = 0.0
            if k - block_start >= block:
                ys.append(acc_y)
                Xs.append(acc_x.copy())
                acc_y, acc_x = 0.0, np.zeros(len(cols))
                block_start = k
        X = np.asarray(Xs)
        y = np.asarray(ys)
        if len(y) < 2 * len(cols):
            raise InsufficientExcitation(f"too few correction blocks for channel {name}")
        scale = np.linalg.norm(X, axis=0)
        if np.any(scale == 0.0):
            raise InsufficientExcitation(f"zero regressor energy on channel {name}")
        cond = float(np.linalg.cond(X / scale))
        conds[name] = cond
        if cond > max_condition:
            raise InsufficientExcitation(f"channel {name}: condition number {cond:.3g}")
        coef, *_ = np.linalg.lstsq(X, y, rcond=None)
        dof = max(len(y) - len(cols), 1)
        resid = y - X @ coef
        se = np.sqrt(resid @ resid / dof * np.diag(np.linalg.inv(X.T @ X)))
        for pname, e in zip(PARAM_GROUPS[name], se):
            if e > max_rel_se * max(abs(getattr(mp, pname)), 1.0):
                raise InsufficientExcitation(
                    f"channel {name}: standard error {e:.3g} on {pname} is too large")
        for pname, c in zip(PARAM_GROUPS[name], coef):
            deltas[pname] = float(c)
    return CalibrationResult(deltas, mp.shifted(**deltas), conds)

