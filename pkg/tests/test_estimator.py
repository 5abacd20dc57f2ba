import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import cached_run
from quadfdr import dynamics as dyn
from quadfdr.estimator import (N_STATES, SVSF, InsufficientExcitation, InsufficientHistory,
                               ModelParams, NonFiniteEstimate, ResidualWindow, VelocityFromPosition,
                               calibrate_params, chattering_extract, predict_state, residual_update)
from quadfdr.sim import calibrate_from_log, replay_estimator

NOISE_OFF = ("noise.gyro=0", "noise.accel=0", "noise.fused_attitude=0", "noise.compass=0",
             "noise.position=0")
GAIN_PARAMS = ("cl_m", "cl_jx", "cl_jy", "cd_jz")


@pytest.fixture
def mp(params):
    return ModelParams.from_vehicle(params)


def hover_x(alt=1.0):
    x = np.zeros(N_STATES)
    x[2] = alt
    return x


def truth12(s: dyn.VehicleState):
    return np.concatenate([s.P, s.V, dyn.euler_zyx_from_R(s.R), s.omega_b])


# ---------------------------------------------------------------- predict

def test_predict_hover_is_fixed_point(mp, params):
    x = hover_x()
    x_prior = predict_state(x, np.full(4, params.hover_voltage), mp)
    np.testing.assert_allclose(x_prior, x, atol=1e-15)


def test_predict_free_fall(mp):
    x_prior = predict_state(hover_x(), np.zeros(4), mp)
    expect = hover_x()
    expect[5] = -mp.g_mag * 1e-3
    np.testing.assert_allclose(x_prior, expect, atol=1e-15)


def test_predict_matches_rk4_step_to_order_dt_squared(params, mp):
    s = dyn.VehicleState(P=np.array([0.3, -0.2, 1.1]), V=np.array([0.4, 0.1, -0.2]),
                         R=dyn.R_from_euler_zyx(0.2, -0.15, 0.7),
                         omega_b=np.array([0.5, -0.8, 0.3]))
    u = np.array([2.3, 1.9, 2.2, 2.0])
    expect = truth12(dyn.step(s, u, 1e-3, params))
    assert np.max(np.abs(predict_state(truth12(s), u, mp) - expect)) < 1e-5


def test_predict_rejects_non_finite(mp):
    x = hover_x()
    x[9] = np.inf
    with pytest.raises(NonFiniteEstimate):
        predict_state(x, np.zeros(4), mp)


# ---------------------------------------------------------------- correct

def test_correct_converged_case_leaves_state_unchanged(mp):
    f = SVSF(hover_x(), mp)
    x_prior = hover_x()
    x_post, K, e_prior, e_post = f.correct(x_prior, x_prior.copy(), np.ones(N_STATES, bool))
    assert np.array_equal(K, np.zeros(N_STATES))
    assert np.array_equal(x_post, x_prior)


def test_correct_without_history_takes_the_whole_error(mp):
    f = SVSF(hover_x(), mp)
    z = hover_x() + 0.1
    x_post, K, e_prior, e_post = f.correct(hover_x(), z, np.ones(N_STATES, bool))
    np.testing.assert_allclose(K, e_prior)
    np.testing.assert_allclose(e_post, 0.0, atol=1e-15)


def test_masked_channels_are_not_corrected(mp):
    f = SVSF(hover_x(), mp)
    mask = np.zeros(N_STATES, bool)
    mask[9:12] = True
    z = hover_x() + 0.5
    x_post, K, _, _ = f.correct(hover_x(), z, mask)
    assert np.all(K[:9] == 0.0) and np.all(K[9:] != 0.0)


finite = st.floats(-10, 10, allow_nan=False, allow_subnormal=False)


@settings(max_examples=200, deadline=None)
@given(arrays(float, N_STATES, elements=finite), arrays(float, N_STATES, elements=finite),
       st.floats(0.05, 0.95))
def test_correction_identity(e_prior, e_prev, gamma):
    mp = ModelParams.from_vehicle(dyn.VehicleParams())
    f = SVSF(np.zeros(N_STATES), mp, gamma=gamma)
    f.state.e_post = e_prev.copy()
    x_prior = np.zeros(N_STATES)
    z = e_prior.copy()
    # yaw errors wrap, so keep both yaw terms inside (-pi, pi)
    z[8] = np.clip(z[8], -3.0, 3.0)
    e_prev[8] = np.clip(e_prev[8], -3.0, 3.0)
    f.state.e_post = e_prev.copy()
    _, _, _, e_post = f.correct(x_prior, z, np.ones(N_STATES, bool))
    np.testing.assert_allclose(np.abs(e_post), gamma * np.abs(e_prev), rtol=0, atol=1e-12)


def test_gamma_must_lie_in_open_unit_interval(mp):
    with pytest.raises(ValueError):
        SVSF(hover_x(), mp, gamma=1.0)


# ---------------------------------------------------------------- residual

def test_residual_zero_when_prediction_exact():
    w = ResidualWindow(N=50)
    outs = [residual_update(w, np.ones(N_STATES), np.ones(N_STATES)) for _ in range(50)]
    assert all(o is None for o in outs[:-1])
    assert np.array_equal(outs[-1], np.zeros(N_STATES))


def test_residual_constant_offset_closed_form():
    w = ResidualWindow(N=50)
    z_hat = np.zeros(N_STATES)
    z = z_hat.copy()
    z[4] = 0.3
    for _ in range(50):
        r = w.update(z, z_hat)
    assert r[4] == pytest.approx(50 * 0.09, rel=1e-12)
    assert np.count_nonzero(r) == 1
    assert w.count == 0 and np.all(w.r == 0.0)


def test_residual_matches_brute_force(rng):
    N = 50
    z = rng.normal(size=(3 * N, N_STATES))
    zh = rng.normal(size=(3 * N, N_STATES))
    z[:, 8] = rng.uniform(-1, 1, 3 * N)
    zh[:, 8] = rng.uniform(-1, 1, 3 * N)
    w = ResidualWindow(N=N)
    got = [r for r in (w.update(z[k], zh[k]) for k in range(3 * N)) if r is not None]
    assert len(got) == 3
    for i, r in enumerate(got):
        ref = np.zeros(N_STATES)
        for k in range(i * N, (i + 1) * N):
            for j in range(N_STATES):
                ref[j] += (z[k, j] - zh[k, j]) ** 2
        np.testing.assert_allclose(r, ref, rtol=0, atol=1e-12)
        assert np.all(r >= 0.0)


def test_residual_wraps_yaw_error():
    w = ResidualWindow(N=1)
    z, zh = np.zeros(N_STATES), np.zeros(N_STATES)
    z[8], zh[8] = np.pi - 0.01, -np.pi + 0.01
    assert w.update(z, zh)[8] == pytest.approx(0.02 ** 2)


# ---------------------------------------------------------------- chattering

def test_chattering_of_alternating_gain_is_its_amplitude():
    a = np.array([0.1, 0.2, 0.3, 0.4])
    hist = [a * (-1) ** k for k in range(11)]
    np.testing.assert_allclose(chattering_extract(hist, 10), a)


def test_chattering_needs_full_window():
    with pytest.raises(InsufficientHistory):
        chattering_extract([np.zeros(4)] * 10, 10)


def test_perfect_model_noise_free_has_no_chattering():
    _, log, _ = cached_run("nominal_hover", NOISE_OFF + ("duration=3",))
    ch = log.cols("ch", ("z_dot", "p", "q", "r"))[log.t >= 0.5]
    assert np.max(np.abs(ch)) < 1e-12


@pytest.mark.parametrize("noise", [True, False])
def test_thrust_gain_mismatch_chattering_matches_prediction(noise):
    # 10% under-estimate of C_L/m in hover: predicted vertical chattering dt * 0.1 * g
    ov = ("duration=3", "fdi_enabled=false", "estimator.model_scale.cl_m=0.9")
    _, log, _ = cached_run("nominal_hover", ov + (() if noise else NOISE_OFF))
    ch = log.col("ch_z_dot")[log.t >= 1.0]
    assert np.mean(ch) == pytest.approx(1e-3 * 0.1 * 9.81, rel=0.25)


def test_posterior_error_bounded_by_noise_level():
    cfg, log, _ = cached_run("nominal_hover")
    stds = np.array([cfg.noise.position] * 3 + [cfg.noise.position / 0.02] * 3
                    + [cfg.noise.fused_attitude] * 2 + [cfg.noise.compass]
                    + [cfg.noise.gyro] * 3)
    e = np.abs(log.cols("epost")[log.t >= 0.5])
    assert np.all(e <= 5.0 * stds)


def test_replay_reproduces_logged_estimator():
    cfg, log, _ = cached_run("nominal_hover", ("duration=2",))
    rep = replay_estimator(log, cfg)
    assert np.array_equal(rep["x_post"], log.cols("xhat"))
    assert np.array_equal(rep["K"], log.cols("K"))


# ---------------------------------------------------------------- calibration

def _rel_errors(res, truth: ModelParams, names):
    return {k: abs(getattr(res.refined, k) - getattr(truth, k)) / max(abs(getattr(truth, k)), 1.0
                                                                     if k == "J3" else 1e-300)
            for k in names}


def test_calibration_null_case_noise_free(params):
    cfg, log, _ = cached_run("calibration_excitation", NOISE_OFF)
    res = calibrate_from_log(log, cfg, 1.5, 3.5)
    errs = _rel_errors(res, ModelParams.from_vehicle(params),
                       GAIN_PARAMS + ("J1", "J2", "J3"))
    assert max(errs.values()) < 1e-3, errs


def test_calibration_null_case_noisy_gain_parameters(params):
    cfg, log, _ = cached_run("calibration_excitation")
    res = calibrate_from_log(log, cfg, 1.5, 3.5)
    errs = _rel_errors(res, ModelParams.from_vehicle(params), GAIN_PARAMS)
    assert max(errs.values()) < 1e-3, errs


@pytest.mark.parametrize("scale", [0.95, 1.05])
def test_calibration_recovers_seeded_roll_gain_error(params, scale):
    cfg, log, _ = cached_run("calibration_excitation", (f"estimator.model_scale.cl_jx={scale}",))
    res = calibrate_from_log(log, cfg, 1.5, 3.5)
    truth = ModelParams.from_vehicle(params).cl_jx
    assert abs(res.refined.cl_jx - truth) / truth < 0.01


def test_calibration_reduces_pitch_chattering():
    cfg, log, _ = cached_run("calibration_excitation", ("estimator.model_scale.cl_jy=0.95",))
    res = calibrate_from_log(log, cfg, 1.5, 3.5)
    seg = (log.t >= 1.5) & (log.t < 3.5)
    pre = replay_estimator(log, cfg)["chatter"][seg, 2]
    post = replay_estimator(log, cfg, res.refined)["chatter"][seg, 2]
    assert np.mean(post) < np.mean(pre)


def test_calibration_without_excitation_is_rejected():
    cfg, log, _ = cached_run("nominal_hover", ("duration=4",))
    with pytest.raises(InsufficientExcitation):
        calibrate_from_log(log, cfg, 1.5, 3.5)


def test_calibration_rejects_short_segment():
    cfg, log, _ = cached_run("calibration_excitation")
    with pytest.raises(ValueError, match="shorter"):
        calibrate_from_log(log, cfg, 1.5, 2.5)


def test_calibration_flat_regressor_raises(mp):
    n = 3000
    with pytest.raises(InsufficientExcitation):
        calibrate_params(np.zeros((n, N_STATES)), np.ones((n, N_STATES), bool),
                         np.zeros((n, 7)), mp)


# ---------------------------------------------------------------- velocity

def test_synthetic_velocity_tracks_ramp():
    vf = VelocityFromPosition(cutoff_hz=10.0, sample_dt=0.02)
    for i in range(100):
        v = vf.update(np.array([0.5 * i * 0.02, 0.0, 1.0]))
    np.testing.assert_allclose(v, [0.5, 0.0, 0.0], atol=1e-9)


def test_chattering_sensitivity_ordering():
    # nominal ceiling over the same flight length as the attack scenarios
    _, nom, _ = cached_run("nominal_hover", ("duration=3",))
    ceiling = np.max(np.abs(nom.col("ch_q")[nom.t >= 0.5]))
    _, gyro, _ = cached_run("fig3_gyro_bias")
    _, pos, _ = cached_run("fig3_position_bias")
    assert np.nanmax(np.abs(gyro.col("ch_q"))) >= 5.0 * ceiling
    assert np.nanmax(np.abs(pos.col("ch_q"))) < 2.0 * ceiling
