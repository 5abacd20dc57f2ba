import numpy as np
import pytest

from conftest import cached_run
from quadfdr.fdi import (FaultDetector, FaultReport, FaultStatus, FdiThresholds, InvalidState,
                         isolation_mask)
from quadfdr.sensors import ChannelId

TH = FdiThresholds()
WIN = 0.05
QUIET_R = np.asarray(TH.residual) * 0.1
LOUD_R = QUIET_R.copy()
LOUD_R[0] = TH.residual[0] * 10
QUIET_CH = np.full(4, 0.01)
LOUD_CH = np.array([0.0, 0.0, 0.2, 0.0])


def drive(det, t0, t1, r_fn, ch_fn):
    """Step the detector at 1 kHz; residuals arrive every 50th step."""
    statuses = []
    for k in range(int(round(t0 * 1000)), int(round(t1 * 1000))):
        t = k * 1e-3
        r = r_fn(t) if (k + 1) % 50 == 0 else None
        statuses.append((t, det.update(t, r, ch_fn(t)).status))
    return statuses


def test_quiet_signals_stay_nominal():
    det = FaultDetector(TH, WIN)
    out = drive(det, 0.0, 3.0, lambda t: QUIET_R, lambda t: QUIET_CH)
    assert {s for _, s in out} == {FaultStatus.NOMINAL}


def test_violations_during_warmup_are_ignored():
    det = FaultDetector(TH, WIN)
    out = drive(det, 0.0, 0.45, lambda t: LOUD_R, lambda t: LOUD_CH)
    assert out[-1][1] is FaultStatus.NOMINAL


def test_imu_attribution_needs_consecutive_chattering():
    det = FaultDetector(TH, WIN)
    drive(det, 0.0, 1.0, lambda t: QUIET_R, lambda t: QUIET_CH)
    # isolated chattering spikes: never M=3 in a row
    spiky = lambda t: LOUD_CH if round(t * 1000) % 3 == 0 else QUIET_CH
    drive(det, 1.0, 1.05, lambda t: LOUD_R, spiky)
    assert det.report.status is FaultStatus.ANOMALY
    out = drive(det, 1.05, 1.1, lambda t: LOUD_R, lambda t: LOUD_CH)
    first = next(t for t, s in out if s is FaultStatus.IMU_FAULT)
    assert first == pytest.approx(1.05 + 2e-3)
    assert det.report.chattering_evidence == {"q": pytest.approx(0.2)}
    assert det.report.t_isolate >= det.report.t_detect


def test_quiet_chattering_escalates_to_position_fault_after_confirmation():
    det = FaultDetector(TH, WIN)
    drive(det, 0.0, 1.0, lambda t: QUIET_R, lambda t: QUIET_CH)
    out = drive(det, 1.0, 1.5, lambda t: LOUD_R, lambda t: QUIET_CH)
    t_det = det.report.t_detect
    assert t_det == pytest.approx(1.049)
    assert det.report.residual_evidence.keys() == {"x"}
    assert det.report.status is FaultStatus.POSITION_FAULT
    # five further residual windows
    assert det.report.t_isolate == pytest.approx(t_det + 5 * WIN)
    assert all(s is FaultStatus.ANOMALY for t, s in out if t_det <= t < det.report.t_isolate)


def test_status_is_monotone_after_isolation():
    det = FaultDetector(TH, WIN)
    drive(det, 0.0, 1.2, lambda t: LOUD_R, lambda t: LOUD_CH)
    assert det.report.status is FaultStatus.IMU_FAULT
    out = drive(det, 1.2, 2.0, lambda t: QUIET_R, lambda t: QUIET_CH)
    assert {s for _, s in out} == {FaultStatus.IMU_FAULT}


def test_threshold_validation():
    with pytest.raises(ValueError):
        FdiThresholds(debounce=0)
    with pytest.raises(ValueError):
        FdiThresholds(chattering=(0.06, 0.06, 0.0, 0.06))
    with pytest.raises(ValueError):
        FdiThresholds(residual=(1.0,) * 11)


def test_imu_fault_mask_keeps_compass_and_position():
    mask = isolation_mask(FaultReport(FaultStatus.IMU_FAULT))
    assert mask == {ChannelId.GYRO: False, ChannelId.ACCEL: False,
                    ChannelId.FUSED_ATTITUDE: False, ChannelId.COMPASS: True,
                    ChannelId.POSITION: True}


def test_position_fault_mask_drops_only_position():
    mask = isolation_mask(FaultReport(FaultStatus.POSITION_FAULT))
    assert [c for c, ok in mask.items() if not ok] == [ChannelId.POSITION]


@pytest.mark.parametrize("status", [FaultStatus.NOMINAL, FaultStatus.ANOMALY])
def test_mask_undefined_before_isolation(status):
    with pytest.raises(InvalidState):
        isolation_mask(FaultReport(status))


# ------------------------------------------------------- closed-loop scenarios

def test_gyro_bias_isolated_as_imu_with_pitch_chattering_evidence():
    _, log, s = cached_run("fig3_gyro_bias")
    assert s.final_status == "ImuFault"
    assert s.chattering_peak_pre_isolation["q"] > 0.06
    assert 1.5 <= s.t_isolate <= 2.0


def test_position_bias_isolated_as_position_with_quiet_chattering():
    _, log, s = cached_run("fig3_position_bias")
    assert s.final_status == "PositionFault"
    ch = np.abs(log.cols("ch", ("z_dot", "p", "q", "r"))[log.t >= 0.5])
    assert ch.max() < 0.06


def test_resonant_alias_isolated_within_half_a_second():
    _, _, s = cached_run("fig5b_imu_alias_fr")
    assert s.final_status == "ImuFault"
    assert s.isolation_latency <= 0.5


def test_logged_status_never_reverts():
    for name in ("fig3_gyro_bias", "fig3_position_bias"):
        _, log, _ = cached_run(name)
        codes = log.col("fdi_status")
        assert np.all(np.diff(codes) >= 0)
