"""Synthetic ground truth and IMU streams.

Motion profiles are closed-form paths in the local tangent-plane chart (NED meters
about the profile origin). :func:`nav_truth` lifts them to geodetic position and
true NED velocity, and :func:`inverse_mechanization` produces the IMU signals an
error-free sensor would record along the path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import frames
from .frames import WGS84, DomainError, EarthModel, GeodeticPosition
from . import dataset
from .dataset import GroundTruth
from .mechanization import ImuSeries

KINDS = ("circle", "rectangle", "lawnmower", "straight-dive", "static")

G0 = 9.80665
DEG = math.pi / 180.0

#: Xsens DOT datasheet values converted to SI. The accelerometer noise density is
#: taken as 120 ug/sqrt(Hz) by default; the sheet's literal "mg" reading is kept
#: as ``XSENS_ACCEL_NOISE_MG``.
XSENS_ACCEL_BIAS = 0.03e-3 * G0
XSENS_GYRO_BIAS = 10.0 * DEG / 3600.0
XSENS_ACCEL_NOISE = 120e-6 * G0
XSENS_ACCEL_NOISE_MG = 120e-3 * G0
XSENS_GYRO_NOISE = 0.007 * DEG

DEFAULT_ORIGIN = GeodeticPosition(32.8 * DEG, 35.0 * DEG, 0.0)


@dataclass(frozen=True)
class MotionProfile:
    """Parameters of one synthetic trajectory.

    Geometry per ``kind``:

    * ``circle``: ``radius``.
    * ``rectangle``: ``length`` (north leg) and ``width`` (east leg), corners
      rounded over ``corner_time`` seconds.
    * ``lawnmower``: legs of ``length`` separated by ``spacing``.
    * ``straight-dive``: straight northbound run undulating in depth by ``depth``
      with ``period``.
    * ``static``: the platform does not move.
    """

    kind: str = "circle"
    speed: float = 1.0
    duration: float = 60.0
    imu_rate: float = 100.0
    gt_rate: float = 5.0
    radius: float = 10.0
    length: float = 20.0
    width: float = 10.0
    spacing: float = 5.0
    corner_time: float = 2.0
    depth: float = 5.0
    period: float = 30.0
    heading: float = 0.0
    origin: GeodeticPosition = DEFAULT_ORIGIN

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"kind: unknown profile kind {self.kind!r}; expected one of {KINDS}")
        for name in ("duration", "imu_rate", "gt_rate"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name}: must be positive")
        if self.kind != "static" and not self.speed > 0:
            raise DomainError("speed: must be positive")
        if self.imu_rate < self.gt_rate:
            raise DomainError("imu_rate: must be at least gt_rate")
        if self.kind in ("rectangle", "lawnmower"):
            half_blend = 0.5 * self.speed * self.corner_time
            legs = (self.length, self.width) if self.kind == "rectangle" else (self.length, self.spacing)
            if not all(leg > 2.0 * half_blend for leg in legs) or not self.corner_time > 0:
                raise DomainError("corner_time: corner blends overlap; shorten corner_time or lengthen legs")
        if self.kind == "circle" and not self.radius > 0:
            raise DomainError("radius: must be positive")

    @property
    def path_length(self) -> float:
        if self.kind == "static":
            return 0.0
        return self.speed * self.duration


@dataclass(frozen=True)
class SensorErrorModel:
    """Additive constant bias plus white Gaussian noise on both triads."""

    accel_bias: tuple = (0.0, 0.0, 0.0)
    gyro_bias: tuple = (0.0, 0.0, 0.0)
    accel_noise_density: float = 0.0
    gyro_noise_density: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.accel_noise_density < 0 or self.gyro_noise_density < 0:
            raise DomainError("noise densities must be non-negative")
        object.__setattr__(self, "accel_bias", tuple(float(x) for x in np.broadcast_to(self.accel_bias, 3)))
        object.__setattr__(self, "gyro_bias", tuple(float(x) for x in np.broadcast_to(self.gyro_bias, 3)))

    @classmethod
    def xsens_dot(cls, seed: int = 0, with_bias: bool = True, accel_noise_unit: str = "ug") -> "SensorErrorModel":
        """Magnitudes of the Xsens DOT sheet; the bias goes on every axis.

        ``accel_noise_unit`` selects how the sheet's "120 .../sqrt(Hz)" is read:
        ``"ug"`` (default, typical of MEMS parts) or ``"mg"`` (as printed).
        """
        if accel_noise_unit not in ("ug", "mg"):
            raise DomainError(f"accel_noise_unit: expected 'ug' or 'mg', got {accel_noise_unit!r}")
        ab = XSENS_ACCEL_BIAS if with_bias else 0.0
        gb = XSENS_GYRO_BIAS if with_bias else 0.0
        an = XSENS_ACCEL_NOISE if accel_noise_unit == "ug" else XSENS_ACCEL_NOISE_MG
        return cls((ab, ab, ab), (gb, gb, gb), an, XSENS_GYRO_NOISE, seed)


# --------------------------------------------------------------------------- paths


@dataclass
class _Kinematics:
    p: NDArray
    v: NDArray
    a: NDArray


def _circle(prof: MotionProfile, t):
    r, s = prof.radius, prof.speed
    om = s / r
    ph = om * t
    c, sn = np.cos(ph), np.sin(ph)
    p = np.stack([r * sn, r * (1.0 - c), 0 * t], -1)
    v = np.stack([s * c, s * sn, 0 * t], -1)
    a = np.stack([-s * om * sn, s * om * c, 0 * t], -1)
    return _Kinematics(p, v, a)


def _straight_dive(prof: MotionProfile, t):
    s, d, per = prof.speed, prof.depth, prof.period
    k = 2.0 * np.pi / per
    z = 0 * t
    p = np.stack([s * t, z, 0.5 * d * (1.0 - np.cos(k * t))], -1)
    v = np.stack([s + z, z, 0.5 * d * k * np.sin(k * t)], -1)
    a = np.stack([z, z, 0.5 * d * k * k * np.cos(k * t)], -1)
    return _Kinematics(p, v, a)


def _static(prof: MotionProfile, t):
    z = np.zeros(np.shape(t) + (3,))
    return _Kinematics(z, z.copy(), z.copy())


BLEND_ORDER = 4


def _hermite_basis(order: int) -> NDArray:
    """Polynomial coefficients of the two-point Hermite basis on [0, 1].

    Row ``j`` (``j <= order``) matches the ``j``-th derivative at ``u = 0``; row
    ``order + 1 + j`` the ``j``-th derivative at ``u = 1``. Columns are ascending
    powers of ``u``.
    """
    n = 2 * (order + 1)
    rows = []
    for u0 in (0.0, 1.0):
        for d in range(order + 1):
            row = np.zeros(n)
            for k in range(d, n):
                row[k] = math.perm(k, d) * u0 ** (k - d)
            rows.append(row)
    return np.linalg.inv(np.array(rows)).T


_HERMITE = _hermite_basis(BLEND_ORDER)


class _BlendedPolyline:
    """Constant-speed polyline whose corners are replaced by polynomial blends.

    A blend spans ``corner_time`` seconds centred on the time the sharp path
    would reach the corner. It matches position and velocity of the straight
    legs and has zero acceleration, jerk and snap at both ends, so position is
    C4 and the ideal IMU signals are C2. End points must sit mid-leg; closed
    paths repeat with period equal to the lap time.
    """

    def __init__(self, waypoints, speed, corner_time, closed):
        self.wp = np.asarray(waypoints, dtype=float)
        self.s = speed
        self.tau = 0.5 * corner_time
        seg = np.diff(self.wp, axis=0)
        self.seg_len = np.linalg.norm(seg, axis=1)
        self.dirs = seg / self.seg_len[:, None]
        self.t_wp = np.concatenate([[0.0], np.cumsum(self.seg_len)]) / speed
        self.closed = closed
        self.period = self.t_wp[-1]

    def _sharp(self, t):
        i = np.clip(np.searchsorted(self.t_wp, t, side="right") - 1, 0, len(self.dirs) - 1)
        return self.wp[i] + self.s * (t - self.t_wp[i])[:, None] * self.dirs[i], self.s * self.dirs[i]

    def __call__(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        tt = np.mod(t, self.period) if self.closed else t
        p, v = self._sharp(tt)
        a = np.zeros_like(p)
        T = 2.0 * self.tau
        for c in range(1, len(self.t_wp) - 1):
            u = (tt - (self.t_wp[c] - self.tau)) / T
            m = (u >= 0) & (u <= 1)
            if not np.any(m):
                continue
            d_in, d_out, corner = self.dirs[c - 1], self.dirs[c], self.wp[c]
            zeros = [np.zeros(2)] * (BLEND_ORDER - 1)
            ends = np.array(
                [corner - self.s * self.tau * d_in, self.s * d_in * T, *zeros,
                 corner + self.s * self.tau * d_out, self.s * d_out * T, *zeros]
            )
            coef = _HERMITE.T @ ends  # (powers, 2 axes)
            uu = u[m]
            k = np.arange(len(coef))
            pw = uu[:, None] ** k
            dpw = k * uu[:, None] ** np.maximum(k - 1, 0)
            ddpw = k * (k - 1) * uu[:, None] ** np.maximum(k - 2, 0)
            p[m] = pw @ coef
            v[m] = (dpw @ coef) / T
            a[m] = (ddpw @ coef) / T**2
        return p, v, a


def _polyline(prof: MotionProfile):
    if prof.kind == "rectangle":
        L, W = prof.length, prof.width
        # Start half-way along the first north leg so no corner sits at t=0.
        wp = [(0, 0), (L / 2, 0), (L / 2, W), (-L / 2, W), (-L / 2, 0), (0, 0)]
        return _BlendedPolyline(wp, prof.speed, prof.corner_time, closed=True)
    L, S = prof.length, prof.spacing
    need = prof.speed * prof.duration + L + S
    wp = [(0.0, 0.0)]
    north, total = True, 0.0
    while total < need:
        n, e = wp[-1]
        wp.append((n + L if north else n - L, e))
        wp.append((wp[-1][0], e + S))
        north = not north
        total += L + S
    return _BlendedPolyline(wp, prof.speed, prof.corner_time, closed=False)


def _planar(prof, t):
    p2, v2, a2 = _polyline(prof)(t)
    z = np.zeros(len(p2))
    return _Kinematics(np.c_[p2, z], np.c_[v2, z], np.c_[a2, z])


def _rotate_heading(kin: _Kinematics, heading: float) -> _Kinematics:
    if heading == 0.0:
        return kin
    c, s = math.cos(heading), math.sin(heading)
    r = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return _Kinematics(kin.p @ r.T, kin.v @ r.T, kin.a @ r.T)


def _kinematics(prof: MotionProfile, t) -> _Kinematics:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t < -1e-12) or np.any(t > prof.duration + 1e-9):
        raise DomainError(f"time outside [0, {prof.duration}] s")
    if prof.kind == "circle":
        kin = _circle(prof, t)
    elif prof.kind == "straight-dive":
        kin = _straight_dive(prof, t)
    elif prof.kind == "static":
        kin = _static(prof, t)
    else:
        kin = _planar(prof, t)
    return _rotate_heading(kin, prof.heading)


def _attitude(v, a):
    vn, ve, vd = v[:, 0], v[:, 1], v[:, 2]
    an, ae, ad = a[:, 0], a[:, 1], a[:, 2]
    vh2 = vn**2 + ve**2
    vh = np.sqrt(vh2)
    moving = vh > 1e-9
    safe = np.where(moving, vh2, 1.0)
    yaw = np.where(moving, np.arctan2(ve, vn), 0.0)
    yaw_rate = np.where(moving, (vn * ae - ve * an) / safe, 0.0)
    pitch = np.where(moving, np.arctan2(-vd, vh), 0.0)
    vh_dot = np.where(moving, (vn * an + ve * ae) / np.where(moving, vh, 1.0), 0.0)
    pitch_rate = np.where(moving, (vh * (-ad) - (-vd) * vh_dot) / (vh2 + vd**2 + (~moving)), 0.0)
    z = np.zeros_like(yaw)
    return np.stack([z, pitch, yaw], -1), np.stack([z, pitch_rate, yaw_rate], -1)


def analytic_state(profile: MotionProfile, t: ArrayLike):
    """Closed-form chart kinematics and attitude at time(s) ``t``.

    Returns
    -------
    p, v, a : ndarray, shape (n, 3)
        Tangent-plane position (m), its first and second time derivatives.
    eta, eta_dot : ndarray, shape (n, 3)
        (roll, pitch, yaw) and their rates. Yaw follows the horizontal velocity
        heading, pitch the flight-path angle, roll is zero.
    """
    kin = _kinematics(profile, t)
    eta, eta_dot = _attitude(kin.v, kin.a)
    return kin.p, kin.v, kin.a, eta, eta_dot


@dataclass
class NavTruth:
    """Nav-frame ground truth along a profile (arrays over time)."""

    t: NDArray
    ned: NDArray
    llh: NDArray
    v_n: NDArray
    v_n_dot: NDArray
    eta: NDArray
    eta_dot: NDArray
    dcm: NDArray = field(repr=False)


def nav_truth(profile: MotionProfile, t: ArrayLike, model: EarthModel = WGS84) -> NavTruth:
    """Geodetic position and true NED velocity/acceleration along a profile.

    Chart coordinates are linear in (lat, lon, h) with scales frozen at the
    origin, so the NED velocity differs from the chart velocity by the factors
    of :func:`pidr.frames.chart_velocity_scale`; this function applies them and
    differentiates them analytically.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    p, v, a, eta, eta_dot = analytic_state(profile, t)
    o = profile.origin
    llh = frames.geodetic_from_ned(p, o, model)
    lat, h = llh[:, 0], llh[:, 2]
    r_m, r_n = frames.radii_of_curvature(lat, model)
    dr_m, dr_n = frames.radii_derivatives(lat, model)
    r_m0, r_n0 = frames.radii_of_curvature(o.lat, model)
    den_n = r_m0 + o.height
    den_e = (r_n0 + o.height) * math.cos(o.lat)
    lat_dot = v[:, 0] / den_n
    h_dot = -v[:, 2]
    k_n = (r_m + h) / den_n
    k_e = (r_n + h) * np.cos(lat) / den_e
    k_n_dot = (dr_m * lat_dot + h_dot) / den_n
    k_e_dot = ((dr_n * lat_dot + h_dot) * np.cos(lat) - (r_n + h) * np.sin(lat) * lat_dot) / den_e
    v_n = np.stack([k_n * v[:, 0], k_e * v[:, 1], v[:, 2]], -1)
    v_n_dot = np.stack(
        [k_n_dot * v[:, 0] + k_n * a[:, 0], k_e_dot * v[:, 1] + k_e * a[:, 1], a[:, 2]], -1
    )
    return NavTruth(t, p, llh, v_n, v_n_dot, eta, eta_dot, frames.dcm_from_euler(eta))


def body_rate_from_euler(eta: ArrayLike, eta_dot: ArrayLike) -> NDArray:
    """Angular rate of the body relative to NED, resolved in the body frame."""
    eta, eta_dot = np.asarray(eta, dtype=float), np.asarray(eta_dot, dtype=float)
    r, p = eta[..., 0], eta[..., 1]
    rd, pd, yd = eta_dot[..., 0], eta_dot[..., 1], eta_dot[..., 2]
    return np.stack(
        [
            rd - yd * np.sin(p),
            pd * np.cos(r) + yd * np.sin(r) * np.cos(p),
            -pd * np.sin(r) + yd * np.cos(r) * np.cos(p),
        ],
        -1,
    )


def imu_times(profile: MotionProfile) -> NDArray:
    n = int(round(profile.duration * profile.imu_rate))
    return np.arange(n + 1) / profile.imu_rate


def gt_times(profile: MotionProfile) -> NDArray:
    n = int(round(profile.duration * profile.gt_rate))
    return np.arange(n + 1) / profile.gt_rate


def ideal_imu(profile: MotionProfile, t: ArrayLike, model: EarthModel = WGS84):
    """Error-free specific force and angular rate at arbitrary times."""
    tr = nav_truth(profile, t, model)
    lat, h = tr.llh[:, 0], tr.llh[:, 2]
    w_ie = frames.earth_rate_n(lat, model)
    w_en = frames.transport_rate(tr.v_n, lat, h, model)
    g = frames.gravity_n(lat, h, model)
    ct = np.swapaxes(tr.dcm, -1, -2)
    acc = tr.v_n_dot + np.cross(2.0 * w_ie + w_en, tr.v_n) - g
    f = np.einsum("nij,nj->ni", ct, acc)
    w = np.einsum("nij,nj->ni", ct, w_ie + w_en) + body_rate_from_euler(tr.eta, tr.eta_dot)
    return f, w


def inverse_mechanization(profile: MotionProfile, model: EarthModel = WGS84) -> ImuSeries:
    """IMU stream at ``profile.imu_rate`` that reproduces the profile when integrated."""
    t = imu_times(profile)
    f, w = ideal_imu(profile, t, model)
    return ImuSeries(t, f, w)


def initial_state(profile: MotionProfile, model: EarthModel = WGS84):
    """Navigation state of the profile at t = 0 (for seeding dead reckoning)."""
    from .mechanization import NavState

    tr = nav_truth(profile, [0.0], model)
    lat, lon, h = tr.llh[0]
    return NavState(GeodeticPosition(lat, lon, h), tr.v_n[0], tr.dcm[0])


def corrupt(imu: ImuSeries, model: SensorErrorModel) -> ImuSeries:
    """Add constant bias and white Gaussian noise with sigma = density * sqrt(rate).

    Accelerometer and gyro noise come from independent named sub-streams of
    ``model.seed`` so changing one density leaves the other realisation intact.
    """
    if (
        model.accel_noise_density == 0
        and model.gyro_noise_density == 0
        and not any(model.accel_bias)
        and not any(model.gyro_bias)
    ):
        return ImuSeries(imu.t.copy(), imu.f.copy(), imu.w.copy())
    rate = imu.rate if len(imu) > 1 else 1.0
    n = len(imu)
    acc_rng = np.random.default_rng([model.seed, 0])
    gyr_rng = np.random.default_rng([model.seed, 1])
    f = imu.f + np.asarray(model.accel_bias)
    w = imu.w + np.asarray(model.gyro_bias)
    if model.accel_noise_density > 0:
        f = f + acc_rng.standard_normal((n, 3)) * (model.accel_noise_density * math.sqrt(rate))
    if model.gyro_noise_density > 0:
        w = w + gyr_rng.standard_normal((n, 3)) * (model.gyro_noise_density * math.sqrt(rate))
    return ImuSeries(imu.t.copy(), f, w)


def ground_truth(profile: MotionProfile, model: EarthModel = WGS84) -> GroundTruth:
    """GT at ``gt_rate``: NED position about the origin, NED velocity and Euler angles."""
    t = gt_times(profile)
    tr = nav_truth(profile, t, model)
    return GroundTruth(t, tr.ned, tr.v_n, frames.wrap_angle(tr.eta), profile.origin)


def emit_dataset(
    profile: MotionProfile,
    errors: SensorErrorModel | None = None,
    out_dir: str | Path | None = None,
    model: EarthModel = WGS84,
):
    """Generate (and optionally write) an IMU/GT pair for a profile.

    Returns the corrupted :class:`ImuSeries` and the :class:`GroundTruth`. With
    ``out_dir`` the files ``imu.csv``, ``gt.csv`` and ``meta.txt`` are written
    there.
    """
    imu = inverse_mechanization(profile, model)
    if errors is not None:
        imu = corrupt(imu, errors)
    gt = ground_truth(profile, model)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        dataset.write_imu_csv(out / "imu.csv", imu)
        dataset.write_gt_csv(out / "gt.csv", gt)
        dataset.write_metadata(out / "meta.txt", profile.origin)
    return imu, gt
