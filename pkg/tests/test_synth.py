import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pidr import dataset, frames, synth
from pidr.frames import DomainError
from pidr.mechanization import ImuSeries

MOVING = ["circle", "rectangle", "lawnmower", "straight-dive"]


def test_unit_conversions():
    assert synth.XSENS_ACCEL_BIAS == pytest.approx(2.94e-4, rel=1e-3)
    assert synth.XSENS_GYRO_BIAS == pytest.approx(4.85e-5, rel=1e-3)
    assert synth.XSENS_GYRO_NOISE == pytest.approx(1.22e-4, rel=1e-2)
    assert synth.XSENS_ACCEL_NOISE == pytest.approx(1.18e-3, rel=1e-2)
    assert synth.XSENS_ACCEL_NOISE_MG == pytest.approx(1000 * synth.XSENS_ACCEL_NOISE)


def test_xsens_model_variants():
    m = synth.SensorErrorModel.xsens_dot(seed=4)
    assert m.gyro_bias == (synth.XSENS_GYRO_BIAS,) * 3 and m.seed == 4
    assert synth.SensorErrorModel.xsens_dot(with_bias=False).accel_bias == (0.0, 0.0, 0.0)
    assert synth.SensorErrorModel.xsens_dot(accel_noise_unit="mg").accel_noise_density == synth.XSENS_ACCEL_NOISE_MG
    with pytest.raises(DomainError):
        synth.SensorErrorModel.xsens_dot(accel_noise_unit="g")


@pytest.mark.parametrize(
    "kw, field",
    [
        (dict(kind="spiral"), "kind"),
        (dict(speed=0.0), "speed"),
        (dict(duration=-1.0), "duration"),
        (dict(imu_rate=1.0, gt_rate=5.0), "imu_rate"),
        (dict(kind="rectangle", width=1.0), "corner_time"),
        (dict(radius=0.0), "radius"),
    ],
)
def test_profile_validation(kw, field):
    with pytest.raises(DomainError, match=field):
        synth.MotionProfile(**kw)


def test_negative_noise_density_rejected():
    with pytest.raises(DomainError):
        synth.SensorErrorModel(accel_noise_density=-1.0)


@pytest.mark.parametrize("radius, speed", [(10.0, 1.0), (3.0, 2.5)])
def test_circle_speed_and_centripetal(radius, speed):
    prof = synth.MotionProfile(kind="circle", radius=radius, speed=speed)
    _, v, a, _, _ = synth.analytic_state(prof, np.linspace(0, prof.duration, 50))
    np.testing.assert_allclose(np.linalg.norm(v, axis=1), speed, rtol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(a[:, :2], axis=1), speed**2 / radius, rtol=1e-12)


@pytest.mark.parametrize("kind", synth.KINDS)
def test_starts_at_origin(kind):
    p = synth.analytic_state(synth.MotionProfile(kind=kind), [0.0])[0]
    np.testing.assert_allclose(p, 0.0, atol=1e-12)


@pytest.mark.parametrize("kind", MOVING)
def test_derivatives_consistent(kind):
    prof = synth.MotionProfile(kind=kind)
    t = np.linspace(0.5, prof.duration - 0.5, 97)
    h = 1e-4
    p0, v0, a0, e0, ed0 = synth.analytic_state(prof, t)
    pp, vp, _, ep, _ = synth.analytic_state(prof, t + h)
    pm, vm, _, em, _ = synth.analytic_state(prof, t - h)
    np.testing.assert_allclose((pp - pm) / (2 * h), v0, atol=1e-6)
    np.testing.assert_allclose((vp - vm) / (2 * h), a0, atol=1e-6)
    np.testing.assert_allclose(frames.wrap_angle(ep - em) / (2 * h), ed0, atol=1e-6)


@pytest.mark.parametrize("kind", MOVING)
def test_yaw_tracks_heading(kind):
    prof = synth.MotionProfile(kind=kind)
    _, v, _, eta, _ = synth.analytic_state(prof, np.linspace(0, prof.duration, 200))
    np.testing.assert_allclose(frames.wrap_angle(eta[:, 2] - np.arctan2(v[:, 1], v[:, 0])), 0.0, atol=1e-12)


@pytest.mark.parametrize("kind", ["rectangle", "lawnmower"])
def test_corner_blends_are_smooth(kind):
    prof = synth.MotionProfile(kind=kind)
    t = np.linspace(0, prof.duration, 20001)
    _, _, a, _, _ = synth.analytic_state(prof, t)
    # no jumps in acceleration between neighbouring samples
    assert np.abs(np.diff(a, axis=0)).max() < 1e-2


def test_time_out_of_range():
    prof = synth.MotionProfile(duration=10.0)
    with pytest.raises(DomainError):
        synth.analytic_state(prof, [10.5])
    with pytest.raises(DomainError):
        synth.analytic_state(prof, [-0.1])


def test_static_inversion():
    prof = synth.MotionProfile(kind="static", duration=1.0)
    f, w = synth.ideal_imu(prof, [0.0, 0.5])
    lat = prof.origin.lat
    g = frames.gravity_magnitude(lat, prof.origin.height)
    np.testing.assert_allclose(f, [[0, 0, -g]] * 2, atol=1e-12)
    np.testing.assert_allclose(w, [frames.earth_rate_n(lat)] * 2, atol=1e-18)


def test_level_circle_specific_force_carries_centripetal():
    prof = synth.MotionProfile(kind="circle", radius=4.0, speed=2.0)
    f, _ = synth.ideal_imu(prof, np.linspace(0, 60, 31))
    np.testing.assert_allclose(np.abs(f[:, 1]), 1.0, rtol=1e-3)


@pytest.mark.parametrize("kind", ["circle", "rectangle", "lawnmower"])
def test_level_profile_balances_gravity(kind):
    prof = synth.MotionProfile(kind=kind)
    t = np.linspace(0, prof.duration, 41)
    f, _ = synth.ideal_imu(prof, t)
    tr = synth.nav_truth(prof, t)
    fn = np.einsum("nij,nj->ni", tr.dcm, f)
    g = frames.gravity_magnitude(tr.llh[:, 0], tr.llh[:, 2])
    w_ie = frames.earth_rate_n(tr.llh[:, 0])
    w_en = frames.transport_rate(tr.v_n, tr.llh[:, 0], tr.llh[:, 2])
    coriolis_d = np.cross(2 * w_ie + w_en, tr.v_n)[:, 2]
    np.testing.assert_allclose(fn[:, 2] - coriolis_d + g, 0.0, atol=1e-9)


def test_corrupt_zero_model_bitwise():
    imu = synth.inverse_mechanization(synth.MotionProfile(duration=2.0))
    out = synth.corrupt(imu, synth.SensorErrorModel())
    assert np.array_equal(out.f, imu.f) and np.array_equal(out.w, imu.w)


def test_corrupt_bias_exact_mean():
    imu = synth.inverse_mechanization(synth.MotionProfile(duration=2.0))
    out = synth.corrupt(imu, synth.SensorErrorModel(gyro_bias=(0, 0, 1e-3)))
    assert np.mean(out.w[:, 2] - imu.w[:, 2]) == pytest.approx(1e-3, rel=1e-9)


@pytest.mark.parametrize("density, rate", [(1e-3, 100.0), (0.5, 20.0)])
def test_corrupt_noise_sigma(density, rate):
    n = 100_000
    imu = ImuSeries(np.arange(n) / rate, np.zeros((n, 3)), np.zeros((n, 3)))
    out = synth.corrupt(imu, synth.SensorErrorModel(accel_noise_density=density, gyro_noise_density=density, seed=3))
    sigma = density * math.sqrt(rate)
    np.testing.assert_allclose(out.f.std(axis=0), sigma, rtol=0.02)
    np.testing.assert_allclose(out.w.std(axis=0), sigma, rtol=0.02)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31))
def test_corrupt_deterministic(seed):
    imu = synth.inverse_mechanization(synth.MotionProfile(duration=1.0))
    em = synth.SensorErrorModel.xsens_dot(seed=seed)
    a, b = synth.corrupt(imu, em), synth.corrupt(imu, em)
    assert np.array_equal(a.f, b.f) and np.array_equal(a.w, b.w)


def test_noise_streams_independent():
    imu = synth.inverse_mechanization(synth.MotionProfile(duration=1.0))
    a = synth.corrupt(imu, synth.SensorErrorModel(accel_noise_density=1e-3, gyro_noise_density=1e-4, seed=1))
    b = synth.corrupt(imu, synth.SensorErrorModel(accel_noise_density=1e-3, gyro_noise_density=5e-4, seed=1))
    assert np.array_equal(a.f, b.f)


def test_emit_dataset_counts_and_files(tmp_path):
    prof = synth.MotionProfile(imu_rate=120.0, gt_rate=5.0, duration=60.0)
    imu, gt = synth.emit_dataset(prof, synth.SensorErrorModel.xsens_dot(seed=2), tmp_path / "a")
    assert len(imu) == 7201 and len(gt.t) == 301
    for name in ("imu.csv", "gt.csv", "meta.txt"):
        assert (tmp_path / "a" / name).exists()
    synth.emit_dataset(prof, synth.SensorErrorModel.xsens_dot(seed=2), tmp_path / "b")
    for name in ("imu.csv", "gt.csv", "meta.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_gt_rows_match_analytic_state(tmp_path):
    prof = synth.MotionProfile(kind="lawnmower", duration=30.0)
    synth.emit_dataset(prof, None, tmp_path)
    gt = dataset.load_gt_csv(tmp_path / "gt.csv")
    p, _, _, eta, _ = synth.analytic_state(prof, gt.t)
    np.testing.assert_allclose(gt.position, p, atol=1e-9)
    np.testing.assert_allclose(frames.wrap_angle(gt.euler - eta), 0.0, atol=1e-9)


def test_gt_velocity_is_nav_velocity():
    prof = synth.MotionProfile(kind="circle", duration=10.0)
    gt = synth.ground_truth(prof)
    np.testing.assert_allclose(gt.velocity, synth.nav_truth(prof, gt.t).v_n)


def test_heading_rotates_profile():
    base = synth.MotionProfile(kind="rectangle")
    rot = synth.MotionProfile(kind="rectangle", heading=math.pi / 2)
    p0 = synth.analytic_state(base, [5.0])[0][0]
    p1 = synth.analytic_state(rot, [5.0])[0][0]
    np.testing.assert_allclose(p1, [-p0[1], p0[0], p0[2]], atol=1e-12)
