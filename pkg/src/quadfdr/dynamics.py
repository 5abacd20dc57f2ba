"""Quadrotor rigid-body model, motor allocation and fixed-step integration.

Frames: inertial North-East-Up, body x forward / y left / z up.  Gravity is
``[0, 0, -g]`` and the collective thrust acts along body +z.

Motor layout (X configuration, arm length ``d`` from the centre of mass)::

    1 front-left  (+l, +l)   spin A
    2 rear-left   (-l, +l)   spin B
    3 rear-right  (-l, -l)   spin A
    4 front-right (+l, -l)   spin B

with ``l = d / sqrt(2)``.  Thrust and drag torque are linear in voltage.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

_HOVER_FRACTION = 0.5


class NonFiniteState(FloatingPointError):
    """Integration produced NaN/inf; the flight has blown up."""


class GimbalLock(ValueError):
    """Z-Y-X Euler extraction requested with |cos(theta)| below the guard."""


@dataclass(frozen=True)
class VehicleParams:
    m: float = 0.125
    J: tuple[float, float, float] = (8.0e-5, 8.0e-5, 1.4e-4)
    d: float = 0.05
    C_L: float = 0.125 * 9.81 / (4 * _HOVER_FRACTION * 4.2)
    C_D: float = 0.01 * 0.125 * 9.81 / (4 * _HOVER_FRACTION * 4.2)
    g_mag: float = 9.81
    u_max: float = 4.2

    def __post_init__(self):
        Jx, Jy, Jz = self.J
        for name, v in (("m", self.m), ("Jx", Jx), ("Jy", Jy), ("Jz", Jz), ("d", self.d),
                        ("C_L", self.C_L), ("C_D", self.C_D), ("u_max", self.u_max)):
            if not v > 0:
                raise ValueError(f"{name} must be positive, got {v}")
        tol = 1e-12 * (Jx + Jy + Jz)
        if Jx + Jy < Jz - tol or Jy + Jz < Jx - tol or Jx + Jz < Jy - tol:
            raise ValueError(f"inertia {self.J} violates the triangle inequality")

    @property
    def J_diag(self) -> np.ndarray:
        return np.asarray(self.J, dtype=float)

    @property
    def arm(self) -> float:
        """Lever arm of each motor about the body x and y axes."""
        return self.d / np.sqrt(2.0)

    @property
    def hover_thrust(self) -> float:
        return self.m * self.g_mag

    @property
    def hover_voltage(self) -> float:
        return self.hover_thrust / (4.0 * self.C_L)

    def scaled(self, **factors: float) -> "VehicleParams":
        """Copy with selected scalar fields multiplied by the given factors."""
        return replace(self, **{k: getattr(self, k) * f for k, f in factors.items()})


@dataclass
class VehicleState:
    P: np.ndarray = field(default_factory=lambda: np.zeros(3))
    V: np.ndarray = field(default_factory=lambda: np.zeros(3))
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    omega_b: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t_now: float = 0.0

    def copy(self) -> "VehicleState":
        return VehicleState(self.P.copy(), self.V.copy(), self.R.copy(),
                            self.omega_b.copy(), self.t_now)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.P, self.V, self.R.ravel(), self.omega_b])

    @classmethod
    def from_vector(cls, y: np.ndarray, t_now: float) -> "VehicleState":
        return cls(y[0:3].copy(), y[3:6].copy(), y[6:15].reshape(3, 3).copy(),
                   y[15:18].copy(), t_now)

    @property
    def euler(self) -> tuple[float, float, float]:
        return euler_zyx_from_R(self.R)


@dataclass(frozen=True)
class BodyWrench:
    f_z: float
    tau: np.ndarray

    def as_vector(self) -> np.ndarray:
        return np.array([self.f_z, *self.tau])


def allocation_matrix(params: VehicleParams) -> np.ndarray:
    """Map motor voltages u (4,) to [f_z, tau_x, tau_y, tau_z]."""
    cl, cd, l = params.C_L, params.C_D, params.arm
    return np.array([
        [cl, cl, cl, cl],
        [cl * l, cl * l, -cl * l, -cl * l],
        [-cl * l, cl * l, cl * l, -cl * l],
        [cd, -cd, cd, -cd],
    ])


def wrench_from_motors(u, params: VehicleParams) -> BodyWrench:
    w = allocation_matrix(params) @ np.asarray(u, dtype=float)
    return BodyWrench(float(w[0]), w[1:4])


def mixer(w: BodyWrench, params: VehicleParams) -> tuple[np.ndarray, bool]:
    """Invert the allocation, clamping to [0, u_max] with thrust priority.

    Returns the motor voltages and a flag that is True when any clamping
    (thrust or torque de-scaling) took place.
    """
    A_inv = np.linalg.inv(allocation_matrix(params))
    u = A_inv @ w.as_vector()
    if np.all(u >= 0.0) and np.all(u <= params.u_max):
        return u, False

    f_max = 4.0 * params.C_L * params.u_max
    f_z = min(max(w.f_z, 0.0), f_max)
    u0 = np.full(4, f_z / (4.0 * params.C_L))
    du = A_inv @ np.array([0.0, *w.tau])
    # largest s in [0, 1] keeping u0 + s*du inside the box
    s = 1.0
    for a, b in zip(u0, du):
        if b > 0:
            s = min(s, (params.u_max - a) / b)
        elif b < 0:
            s = min(s, (0.0 - a) / b)
    s = max(s, 0.0)
    return np.clip(u0 + s * du, 0.0, params.u_max), True


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def derivative(state: VehicleState, w: BodyWrench, params: VehicleParams):
    """Continuous rigid-body dynamics.

    Returns (P_dot, V_dot, R_dot, omega_dot).
    """
    y_dot = _derivative_vec(state.to_vector(), w.f_z, np.asarray(w.tau, dtype=float),
                            params.m, params.g_mag, params.J_diag)
    return y_dot[0:3], y_dot[3:6], y_dot[6:15].reshape(3, 3), y_dot[15:18]


def _derivative_vec(y, f_z, tau, m, g_mag, J):
    R = y[6:15].reshape(3, 3)
    w = y[15:18]
    acc = R[:, 2] * (f_z / m)
    acc[2] -= g_mag
    R_dot = R @ skew(w)
    w_dot = (tau - np.cross(w, J * w)) / J
    out = np.empty(18)
    out[0:3] = y[3:6]
    out[3:6] = acc
    out[6:15] = R_dot.ravel()
    out[15:18] = w_dot
    return out


def project_to_so3(R: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (polar factor)."""
    U, _, Vt = np.linalg.svd(R)
    Q = U @ Vt
    if np.linalg.det(Q) < 0:
        U[:, -1] *= -1
        Q = U @ Vt
    return Q


def step(state: VehicleState, u, dt: float, params: VehicleParams) -> VehicleState:
    """Advance one RK4 step with the motor command held constant over dt."""
    if not (0.0 < dt <= 2e-3):
        raise ValueError(f"dt must lie in (0, 2 ms], got {dt}")
    w = wrench_from_motors(u, params)
    return step_wrench(state, w, dt, params)


def step_wrench(state: VehicleState, w: BodyWrench, dt: float,
                params: VehicleParams) -> VehicleState:
    f_z, tau = w.f_z, np.asarray(w.tau, dtype=float)
    m, g, J = params.m, params.g_mag, params.J_diag
    y = state.to_vector()
    k1 = _derivative_vec(y, f_z, tau, m, g, J)
    k2 = _derivative_vec(y + 0.5 * dt * k1, f_z, tau, m, g, J)
    k3 = _derivative_vec(y + 0.5 * dt * k2, f_z, tau, m, g, J)
    k4 = _derivative_vec(y + dt * k3, f_z, tau, m, g, J)
    y_next = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(y_next)):
        raise NonFiniteState(f"non-finite state at t={state.t_now + dt:.4f}")
    nxt = VehicleState.from_vector(y_next, state.t_now + dt)
    nxt.R = project_to_so3(nxt.R)
    return nxt


def R_from_euler_zyx(phi: float, theta: float, psi: float) -> np.ndarray:
    """Body-to-inertial rotation Rz(psi) @ Ry(theta) @ Rx(phi)."""
    cf, sf = np.cos(phi), np.sin(phi)
    ct, st = np.cos(theta), np.sin(theta)
    cp, sp = np.cos(psi), np.sin(psi)
    return np.array([
        [cp * ct, cp * st * sf - sp * cf, cp * st * cf + sp * sf],
        [sp * ct, sp * st * sf + cp * cf, sp * st * cf - cp * sf],
        [-st, ct * sf, ct * cf],
    ])


def euler_zyx_from_R(R: np.ndarray) -> tuple[float, float, float]:
    cos_theta = np.hypot(R[0, 0], R[1, 0])
    if cos_theta < 1e-6:
        raise GimbalLock(f"|cos(theta)| = {cos_theta:.3g} below guard")
    theta = np.arctan2(-R[2, 0], cos_theta)
    phi = np.arctan2(R[2, 1], R[2, 2])
    psi = np.arctan2(R[1, 0], R[0, 0])
    return float(phi), float(theta), float(psi)


def euler_rate_matrix(phi: float, theta: float) -> np.ndarray:
    """W such that d/dt [phi, theta, psi] = W @ omega_b for the Z-Y-X sequence."""
    sf, cf = np.sin(phi), np.cos(phi)
    ct, tt = np.cos(theta), np.tan(theta)
    return np.array([
        [1.0, sf * tt, cf * tt],
        [0.0, cf, -sf],
        [0.0, sf / ct, cf / ct],
    ])


def hover_state(altitude: float = 1.0, psi: float = 0.0) -> VehicleState:
    return VehicleState(P=np.array([0.0, 0.0, altitude]), R=R_from_euler_zyx(0.0, 0.0, psi))
