import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pidr import frames
from pidr.frames import WGS84, DomainError

A = 6378137.0
# a(1 - e2) and a / sqrt(1 - e2), evaluated with 30-digit decimals
R_M_EQUATOR = 6335439.32729282843
R_POLE = 6399593.62575848883
G_POLE = 9.832184937859008

finite = st.floats(-10.0, 10.0, allow_nan=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)
lats = st.floats(-math.pi / 2, math.pi / 2)
inner_euler = st.tuples(
    st.floats(-math.pi, math.pi),
    st.floats(-math.pi / 2 + 1e-3, math.pi / 2 - 1e-3),
    st.floats(-math.pi, math.pi),
).map(np.array)


def test_wgs84_constants():
    assert WGS84.semi_major_axis == A
    assert WGS84.e2 == 0.00669437999014
    assert WGS84.earth_rate == 7.2921158e-5


@pytest.mark.parametrize("kw", [dict(semi_major_axis=0.0), dict(e2=1.0), dict(e2=-0.1), dict(earth_rate=0.0)])
def test_earth_model_rejects_bad_parameters(kw):
    with pytest.raises(ValueError):
        frames.EarthModel(**kw)


@pytest.mark.parametrize(
    "x, expected",
    [(0.0, 0.0), (math.pi, math.pi), (-math.pi, math.pi), (3 * math.pi / 2, -math.pi / 2), (7.0, 7.0 - 2 * math.pi)],
)
def test_wrap_angle(x, expected):
    assert frames.wrap_angle(x) == pytest.approx(expected, abs=1e-12)


@given(st.floats(-100.0, 100.0))
def test_wrap_angle_range(x):
    w = frames.wrap_angle(x)
    assert -math.pi < w <= math.pi
    assert math.sin(w) == pytest.approx(math.sin(x), abs=1e-9)


def test_geodetic_position_wraps_and_validates():
    p = frames.GeodeticPosition(0.1, 3 * math.pi / 2, 5.0)
    assert p.lon == pytest.approx(-math.pi / 2)
    with pytest.raises(DomainError):
        frames.GeodeticPosition(2.0, 0.0, 0.0)
    with pytest.raises(DomainError):
        frames.GeodeticPosition(0.0, 0.0, math.inf)


def test_euler_angles_gimbal_zone():
    with pytest.raises(DomainError):
        frames.EulerAngles(0.0, math.pi / 2, 0.0)
    e = frames.EulerAngles(4.0, 0.2, -4.0)
    assert -math.pi < e.roll <= math.pi and -math.pi < e.yaw <= math.pi


def test_radii_equator():
    r_m, r_n = frames.radii_of_curvature(0.0)
    assert r_n == A
    assert r_m == pytest.approx(R_M_EQUATOR, rel=1e-13)


def test_radii_pole_equal():
    r_m, r_n = frames.radii_of_curvature(math.pi / 2)
    assert r_m == pytest.approx(R_POLE, rel=1e-13)
    assert r_n == pytest.approx(R_POLE, rel=1e-13)


@given(lats)
def test_radii_ordering(lat):
    r_m, r_n = frames.radii_of_curvature(lat)
    assert 0 < r_m <= r_n * (1 + 1e-15)


def test_radii_derivatives_match_finite_differences():
    lat = np.linspace(-1.4, 1.4, 9)
    d = 1e-6
    rp, rnp = frames.radii_of_curvature(lat + d)
    rm, rnm = frames.radii_of_curvature(lat - d)
    dm, dn = frames.radii_derivatives(lat)
    np.testing.assert_allclose(dm, (rp - rm) / (2 * d), atol=1e-3)
    np.testing.assert_allclose(dn, (rnp - rnm) / (2 * d), atol=1e-3)


@pytest.mark.parametrize("lat", [math.nan, math.inf, 1.6])
def test_radii_domain(lat):
    with pytest.raises(DomainError):
        frames.radii_of_curvature(lat)


def test_skew_examples():
    assert np.array_equal(frames.skew([0, 0, 0]), np.zeros((3, 3)))
    np.testing.assert_array_equal(frames.skew([1, 2, 3]) @ [4, 5, 6], [-3, 6, -3])


@given(vec3, vec3)
def test_skew_is_cross_product(w, v):
    m = frames.skew(w)
    np.testing.assert_allclose(m @ v, np.cross(w, v), atol=1e-12)
    np.testing.assert_array_equal(m, -m.T)
    assert np.trace(m) == 0
    np.testing.assert_array_equal(frames.vee(m), w)


def test_skew_rejects_nonfinite():
    with pytest.raises(DomainError):
        frames.skew([0, math.nan, 0])


def test_dcm_zero_is_identity():
    np.testing.assert_array_equal(frames.dcm_from_euler(frames.EulerAngles(0, 0, 0)), np.eye(3))


def test_dcm_yaw_quarter_turn_maps_north_to_east():
    c = frames.dcm_from_euler([0.0, 0.0, math.pi / 2])
    np.testing.assert_allclose(c @ [1, 0, 0], [0, 1, 0], atol=1e-15)
    np.testing.assert_allclose(c @ [0, 0, 1], [0, 0, 1], atol=1e-15)


def test_dcm_pitch_up_raises_nose():
    # body x-axis tilts toward negative down (up) for positive pitch
    c = frames.dcm_from_euler([0.0, 0.3, 0.0])
    np.testing.assert_allclose(c @ [1, 0, 0], [math.cos(0.3), 0, -math.sin(0.3)], atol=1e-15)


def test_dcm_roll_right_wing_down():
    c = frames.dcm_from_euler([0.3, 0.0, 0.0])
    np.testing.assert_allclose(c @ [0, 1, 0], [0, math.cos(0.3), math.sin(0.3)], atol=1e-15)


@settings(max_examples=200)
@given(inner_euler)
def test_dcm_in_so3(eta):
    c = frames.dcm_from_euler(eta)
    assert np.abs(c.T @ c - np.eye(3)).max() < 1e-12
    assert abs(np.linalg.det(c) - 1) < 1e-12


def test_dcm_gimbal_zone():
    with pytest.raises(DomainError):
        frames.dcm_from_euler([0.0, math.pi / 2 - 1e-7, 0.0])
    with pytest.raises(DomainError):
        frames.dcm_from_euler([0.0, -math.pi / 2, 0.0])


def test_dcm_stacked_matches_single():
    eta = np.array([[0.1, 0.2, 0.3], [-1.0, 0.5, 2.5]])
    stack = frames.dcm_from_euler(eta)
    for k in range(2):
        np.testing.assert_array_equal(stack[k], frames.dcm_from_euler(eta[k]))


def test_euler_from_identity():
    np.testing.assert_array_equal(frames.euler_from_dcm(np.eye(3)), [0.0, 0.0, 0.0])


def test_euler_recovers_pitch():
    e = frames.euler_from_dcm(frames.dcm_from_euler([0.0, math.pi / 4, 0.0]))
    np.testing.assert_allclose(e, [0.0, math.pi / 4, 0.0], atol=1e-15)


def test_euler_round_trip_1000():
    rng = np.random.default_rng(1)
    eta = np.column_stack(
        [rng.uniform(-math.pi, math.pi, 1000), rng.uniform(-1.55, 1.55, 1000), rng.uniform(-math.pi, math.pi, 1000)]
    )
    c = frames.dcm_from_euler(eta)
    back = frames.dcm_from_euler(frames.euler_from_dcm(c))
    assert np.abs(back - c).max() < 1e-9


def test_euler_near_gimbal_rejected():
    c = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]])
    with pytest.raises(DomainError):
        frames.euler_from_dcm(c)


def test_earth_rate_examples():
    we = WGS84.earth_rate
    np.testing.assert_allclose(frames.earth_rate_n(math.pi / 2), [0, 0, -we], atol=1e-20)
    np.testing.assert_array_equal(frames.earth_rate_n(0.0), [we, 0, 0])


@given(lats)
def test_earth_rate_norm(lat):
    assert np.linalg.norm(frames.earth_rate_n(lat)) == pytest.approx(WGS84.earth_rate, rel=1e-14)


def test_transport_rate_examples():
    np.testing.assert_array_equal(frames.transport_rate([0, 0, 0], 0.3, 10.0), [0, 0, 0])
    np.testing.assert_allclose(frames.transport_rate([0, A, 0], 0.0, 0.0), [1, 0, 0], atol=1e-15)
    r = frames.transport_rate([3.0, 0.0, -2.0], 0.0, 0.0)
    assert r[0] == 0 and r[2] == 0


def test_transport_rate_formula():
    v = np.array([5.0, -3.0, 1.0])
    lat, h = 0.6, 120.0
    r_m, r_n = frames.radii_of_curvature(lat)
    expected = [v[1] / (r_n + h), -v[0] / (r_m + h), -v[1] * math.tan(lat) / (r_n + h)]
    np.testing.assert_allclose(frames.transport_rate(v, lat, h), expected, rtol=1e-15)


def test_transport_rate_polar():
    with pytest.raises(DomainError):
        frames.transport_rate([1, 1, 0], math.pi / 2 - 1e-7, 0.0)


def test_gravity_examples():
    assert frames.gravity_magnitude(0.0, 0.0) == pytest.approx(9.7803253359, abs=1e-12)
    assert frames.gravity_magnitude(math.pi / 2, 0.0) == pytest.approx(G_POLE, abs=1e-12)
    assert frames.gravity_magnitude(0.5, 1000.0) < frames.gravity_magnitude(0.5, 0.0)
    g = frames.gravity_n(0.5, 0.0)
    assert g[0] == 0 and g[1] == 0 and g[2] > 0


@given(lats, st.floats(-999.0, 10000.0))
def test_gravity_range(lat, h):
    assert 9.7 < frames.gravity_magnitude(lat, h) < 9.9


def test_gravity_domain():
    with pytest.raises(DomainError):
        frames.gravity_magnitude(0.0, -2000.0)


def test_d_matrix_examples():
    d = frames.d_matrix(0.4, 50.0)
    np.testing.assert_array_equal(d @ [0, 0, 7.0], [0, 0, -7.0])
    r_m, _ = frames.radii_of_curvature(0.0)
    assert (frames.d_matrix(0.0, 0.0) @ [r_m, 0, 0])[0] == pytest.approx(1.0, rel=1e-15)


def test_d_matrix_east_entry_at_60_deg():
    lat = math.radians(60)
    _, r_n60 = frames.radii_of_curvature(lat)
    _, r_n0 = frames.radii_of_curvature(0.0)
    d60, d0 = frames.d_matrix(lat, 0.0)[1, 1], frames.d_matrix(0.0, 0.0)[1, 1]
    assert d60 == pytest.approx(1 / (r_n60 * math.cos(lat)), rel=1e-14)
    assert d60 / d0 == pytest.approx(2.0 * r_n0 / r_n60, rel=1e-12)


def test_d_matrix_polar():
    with pytest.raises(DomainError):
        frames.d_matrix(math.pi / 2, 0.0)


def test_orthonormalize_repairs_perturbation():
    c = frames.dcm_from_euler([0.3, -0.2, 1.0]) + 1e-6 * np.arange(9).reshape(3, 3)
    o = frames.orthonormalize(c)
    np.testing.assert_allclose(o.T @ o, np.eye(3), atol=1e-14)
    assert np.linalg.det(o) == pytest.approx(1.0)


@given(st.floats(-2000, 2000), st.floats(-2000, 2000), st.floats(-100, 100))
def test_ned_chart_round_trip(n, e, d):
    origin = frames.GeodeticPosition(0.6, 0.5, 30.0)
    llh = frames.geodetic_from_ned([n, e, d], origin)
    np.testing.assert_allclose(frames.ned_from_geodetic(llh, origin), [n, e, d], atol=1e-8)


def test_chart_velocity_scale_unity_at_origin():
    origin = frames.GeodeticPosition(0.6, 0.5, 30.0)
    np.testing.assert_allclose(frames.chart_velocity_scale(origin.lat, origin.height, origin), [1, 1, 1], rtol=1e-15)


def test_chart_velocity_scale_matches_chart_derivative():
    origin = frames.GeodeticPosition(0.6, 0.5, 30.0)
    llh = np.array([0.6002, 0.5003, 45.0])
    v = np.array([3.0, -4.0, 0.5])
    dt = 10.0  # the chart is affine in (lat, lon, h)
    rate = frames.d_matrix(llh[0], llh[2]) @ v
    ned_rate = (frames.ned_from_geodetic(llh + rate * dt, origin) - frames.ned_from_geodetic(llh - rate * dt, origin)) / (
        2 * dt
    )
    np.testing.assert_allclose(ned_rate, frames.chart_velocity_scale(llh[0], llh[2], origin) * v, rtol=1e-9)
