import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quadfdr import dynamics as dyn
from quadfdr.dynamics import BodyWrench, VehicleParams, VehicleState


def test_zero_input_gives_zero_wrench(params):
    w = dyn.wrench_from_motors(np.zeros(4), params)
    assert w.f_z == 0.0
    assert np.all(w.tau == 0.0)


def test_equal_inputs_give_pure_thrust(params):
    c = 1.7
    w = dyn.wrench_from_motors(np.full(4, c), params)
    assert w.f_z == pytest.approx(4 * params.C_L * c, rel=1e-15)
    assert np.allclose(w.tau, 0.0, atol=1e-18)


def test_spin_pairs_give_opposite_yaw(params):
    # motors 1 and 3 spin one way, 2 and 4 the other: tau_z = C_D * (u1 - u2 + u3 - u4)
    c = 2.0
    a = dyn.wrench_from_motors([c, 0, c, 0], params)
    b = dyn.wrench_from_motors([0, c, 0, c], params)
    assert a.tau[2] == pytest.approx(2 * params.C_D * c)
    assert b.tau[2] == pytest.approx(-2 * params.C_D * c)


def test_roll_and_pitch_levers_by_hand(params):
    l = params.d / np.sqrt(2)
    w = dyn.wrench_from_motors([1.0, 0, 0, 0], params)  # front-left motor only
    assert w.tau[0] == pytest.approx(params.C_L * l)    # rolls right side down
    assert w.tau[1] == pytest.approx(-params.C_L * l)   # pitches nose up


def test_mixer_hover_is_symmetric(params):
    u, sat = dyn.mixer(BodyWrench(params.m * params.g_mag, np.zeros(3)), params)
    assert not sat
    assert np.allclose(u, params.m * params.g_mag / (4 * params.C_L), rtol=1e-14)


def test_mixer_round_trip_random_interior(params, rng):
    A = dyn.allocation_matrix(params)
    worst = 0.0
    for _ in range(1000):
        u = rng.uniform(0.05, 0.95, 4) * params.u_max
        w = A @ u
        u2, sat = dyn.mixer(BodyWrench(w[0], w[1:]), params)
        assert not sat
        worst = max(worst, np.max(np.abs(A @ u2 - w)))
    assert worst < 1e-10


def test_mixer_flags_thrust_beyond_ceiling(params):
    f = 4 * params.C_L * params.u_max * 1.1
    u, sat = dyn.mixer(BodyWrench(f, np.zeros(3)), params)
    assert sat
    assert np.all(u <= params.u_max) and np.all(u >= 0)


@given(st.floats(-0.05, 0.05), st.floats(-0.05, 0.05), st.floats(-0.01, 0.01))
def test_mixer_saturation_keeps_thrust_and_torque_direction(tx, ty, tz):
    p = VehicleParams()
    w = BodyWrench(p.m * p.g_mag, np.array([tx, ty, tz]))
    u, sat = dyn.mixer(w, p)
    assert np.all((u >= 0) & (u <= p.u_max))
    got = dyn.wrench_from_motors(u, p)
    assert got.f_z == pytest.approx(w.f_z, rel=1e-9)
    # torques are scaled by a common non-negative factor
    if np.linalg.norm(w.tau) > 1e-9:
        s = got.tau @ w.tau / (w.tau @ w.tau)
        assert -1e-12 <= s <= 1 + 1e-9
        assert np.allclose(got.tau, s * w.tau, atol=1e-12)


def test_params_invariants():
    with pytest.raises(ValueError):
        VehicleParams(m=-1.0)
    with pytest.raises(ValueError):
        VehicleParams(J=(1e-5, 1e-5, 1e-4))  # Jx + Jy < Jz


def test_derivative_hover_and_free_fall(params):
    s = VehicleState()
    dP, dV, dR, dw = dyn.derivative(s, BodyWrench(params.m * params.g_mag, np.zeros(3)), params)
    assert np.allclose(dV, 0.0) and np.allclose(dw, 0.0)
    _, dV, _, _ = dyn.derivative(s, BodyWrench(0.0, np.zeros(3)), params)
    assert np.allclose(dV, [0, 0, -params.g_mag])


def test_spin_about_principal_axis_has_no_gyroscopic_term(params):
    s = VehicleState(omega_b=np.array([0.0, 0.0, 3.0]))
    _, _, _, dw = dyn.derivative(s, BodyWrench(0.0, np.zeros(3)), params)
    assert np.all(dw == 0.0)


def test_hover_holds_position_for_ten_seconds(params):
    s = dyn.hover_state(1.0)
    u = np.full(4, params.hover_voltage)
    for _ in range(10_000):
        s = dyn.step(s, u, 1e-3, params)
    assert np.linalg.norm(s.P - [0, 0, 1.0]) < 1e-6


def test_orthonormality_after_many_steps(params):
    s = VehicleState(omega_b=np.array([1.3, -0.7, 2.1]))
    tau_u = [2.3, 2.0, 1.9, 2.2]
    for _ in range(10_000):
        s = dyn.step(s, tau_u, 1e-3, params)
    assert np.linalg.norm(s.R.T @ s.R - np.eye(3)) < 1e-6
    assert abs(np.linalg.det(s.R) - 1.0) < 1e-6


def test_torque_free_angular_momentum_conserved(params):
    s = VehicleState(omega_b=np.array([2.0, -1.0, 4.0]))
    J = params.J_diag
    L0 = s.R @ (J * s.omega_b)
    for _ in range(5000):
        s = dyn.step(s, np.zeros(4), 1e-3, params)
    L = s.R @ (J * s.omega_b)
    assert np.linalg.norm(L - L0) / np.linalg.norm(L0) < 1e-6


def test_step_rejects_coarse_dt(params):
    with pytest.raises(ValueError):
        dyn.step(VehicleState(), np.zeros(4), 5e-3, params)


def test_step_non_finite_raises(params):
    with pytest.raises(dyn.NonFiniteState):
        dyn.step(VehicleState(), [np.nan, 0, 0, 0], 1e-3, params)


def test_step_is_deterministic(params):
    def run():
        s = VehicleState(omega_b=np.array([0.3, 0.2, -0.1]))
        for k in range(500):
            s = dyn.step(s, [2.0 + 0.1 * np.sin(k), 2.1, 2.05, 2.0], 1e-3, params)
        return s.to_vector()
    assert np.array_equal(run(), run())


def test_euler_identity_and_yaw_axis():
    assert np.array_equal(dyn.R_from_euler_zyx(0, 0, 0), np.eye(3))
    R = dyn.R_from_euler_zyx(0, 0, np.pi / 2)
    assert np.allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-15)


def test_euler_round_trip_random(rng):
    worst = 0.0
    for _ in range(1000):
        ang = rng.uniform([-np.pi, -np.deg2rad(80), -np.pi], [np.pi, np.deg2rad(80), np.pi])
        back = dyn.euler_zyx_from_R(dyn.R_from_euler_zyx(*ang))
        worst = max(worst, np.max(np.abs(np.array(back) - ang)))
    assert worst < 1e-12


def test_euler_matches_axis_rotation_composition(rng):
    def rx(a):
        c, s = np.cos(a), np.sin(a)
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])

    def ry(a):
        c, s = np.cos(a), np.sin(a)
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])

    def rz(a):
        c, s = np.cos(a), np.sin(a)
        return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])

    for _ in range(50):
        f, t, p = rng.uniform(-1.4, 1.4, 3)
        assert np.allclose(dyn.R_from_euler_zyx(f, t, p), rz(p) @ ry(t) @ rx(f), atol=1e-15)


def test_gimbal_lock_guard():
    with pytest.raises(dyn.GimbalLock):
        dyn.euler_zyx_from_R(dyn.R_from_euler_zyx(0.1, np.pi / 2, 0.2))


@settings(max_examples=50)
@given(st.floats(-1.2, 1.2), st.floats(-1.2, 1.2), st.floats(-3, 3),
       st.lists(st.floats(-3, 3), min_size=3, max_size=3))
def test_euler_rate_matrix_matches_finite_difference(phi, theta, psi, w):
    w = np.array(w)
    R = dyn.R_from_euler_zyx(phi, theta, psi)
    h = 1e-7
    R2 = R @ (np.eye(3) + h * dyn.skew(w))
    a2 = np.array(dyn.euler_zyx_from_R(dyn.project_to_so3(R2)))
    a1 = np.array([phi, theta, psi])
    d = (a2 - a1)
    d[2] = (d[2] + np.pi) % (2 * np.pi) - np.pi
    assert np.allclose(d / h, dyn.euler_rate_matrix(phi, theta) @ w, atol=1e-4 * (1 + np.abs(w).sum()))
