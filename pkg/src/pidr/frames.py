"""Geodesy constants, rotation algebra and the auxiliary terms of the NED strapdown equations.

All angles are radians. Functions broadcast over leading dimensions where that is
cheap to support (``lat`` arrays, stacks of Euler triples).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

#: Pitch margin from +-pi/2 inside which Euler angles are rejected.
GIMBAL_MARGIN = 1e-6
#: Latitude margin from the poles inside which tan(lat) terms are rejected.
POLAR_MARGIN = 1e-6


class DomainError(ValueError):
    """Raised when an input lies outside the domain of a navigation formula."""


@dataclass(frozen=True)
class EarthModel:
    """Reference ellipsoid, Earth rate and normal-gravity parameters.

    Defaults are WGS84. Gravity follows Somigliana's closed form with a linear
    free-air correction.
    """

    semi_major_axis: float = 6378137.0
    e2: float = 0.00669437999014
    earth_rate: float = 7.2921158e-5
    gravity_equator: float = 9.7803253359
    gravity_k: float = 0.00193185265241
    free_air: float = 3.0877e-6

    def __post_init__(self):
        if not self.semi_major_axis > 0:
            raise ValueError("semi_major_axis must be positive")
        if not 0 <= self.e2 < 1:
            raise ValueError("eccentricity must lie in [0, 1)")
        if not self.earth_rate > 0:
            raise ValueError("earth_rate must be positive")

    @property
    def eccentricity(self) -> float:
        return math.sqrt(self.e2)


WGS84 = EarthModel()


def wrap_angle(x: ArrayLike) -> NDArray | float:
    """Wrap angles to the half-open interval (-pi, pi]."""
    x = np.asarray(x, dtype=float)
    out = x - 2.0 * np.pi * np.ceil((x - np.pi) / (2.0 * np.pi))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class GeodeticPosition:
    lat: float
    lon: float
    height: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon) and math.isfinite(self.height)):
            raise DomainError("geodetic position must be finite")
        if abs(self.lat) > math.pi / 2:
            raise DomainError(f"latitude {self.lat} outside [-pi/2, pi/2]")
        object.__setattr__(self, "lon", wrap_angle(self.lon))

    def as_array(self) -> NDArray:
        return np.array([self.lat, self.lon, self.height])


@dataclass(frozen=True)
class EulerAngles:
    """Roll, pitch and yaw of the body frame with respect to NED (ZYX sequence)."""

    roll: float
    pitch: float
    yaw: float

    def __post_init__(self):
        if not abs(self.pitch) < math.pi / 2 - GIMBAL_MARGIN:
            raise DomainError(f"pitch {self.pitch} inside the gimbal-lock zone")
        object.__setattr__(self, "roll", wrap_angle(self.roll))
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    def as_array(self) -> NDArray:
        return np.array([self.roll, self.pitch, self.yaw])


def _check_lat(lat, margin=None):
    lat = np.asarray(lat, dtype=float)
    if not np.all(np.isfinite(lat)):
        raise DomainError("latitude must be finite")
    limit = np.pi / 2 if margin is None else np.pi / 2 - margin
    bad = np.abs(lat) > limit if margin is None else np.abs(lat) >= limit
    if np.any(bad):
        raise DomainError(f"latitude outside the allowed range |lat| < {limit}")
    return lat


def radii_of_curvature(lat: ArrayLike, model: EarthModel = WGS84):
    """Meridian (R_M) and transverse (R_N) radii of curvature.

    Parameters
    ----------
    lat : array_like
        Geodetic latitude in radians, ``|lat| <= pi/2``.
    model : EarthModel
        Reference ellipsoid.

    Returns
    -------
    r_m, r_n : float or ndarray
        Radii in meters, same shape as ``lat``.
    """
    lat = _check_lat(lat)
    a, e2 = model.semi_major_axis, model.e2
    w = 1.0 - e2 * np.sin(lat) ** 2
    r_n = a / np.sqrt(w)
    r_m = a * (1.0 - e2) / w**1.5
    if lat.ndim == 0:
        return float(r_m), float(r_n)
    return r_m, r_n


def radii_derivatives(lat: ArrayLike, model: EarthModel = WGS84):
    """Derivatives dR_M/dlat and dR_N/dlat in meters per radian."""
    lat = _check_lat(lat)
    a, e2 = model.semi_major_axis, model.e2
    s, c = np.sin(lat), np.cos(lat)
    w = 1.0 - e2 * s**2
    dr_m = 3.0 * a * (1.0 - e2) * e2 * s * c / w**2.5
    dr_n = a * e2 * s * c / w**1.5
    return dr_m, dr_n


def skew(omega: ArrayLike) -> NDArray:
    """Skew-symmetric matrix such that ``skew(w) @ v == cross(w, v)``."""
    w = np.asarray(omega, dtype=float)
    if not np.all(np.isfinite(w)):
        raise DomainError("angular rate must be finite")
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def vee(m: ArrayLike) -> NDArray:
    """Inverse of :func:`skew` (uses the antisymmetric part)."""
    m = np.asarray(m, dtype=float)
    return 0.5 * np.stack(
        [m[..., 2, 1] - m[..., 1, 2], m[..., 0, 2] - m[..., 2, 0], m[..., 1, 0] - m[..., 0, 1]],
        axis=-1,
    )


def _euler_array(eta):
    if isinstance(eta, EulerAngles):
        return eta.as_array()
    return np.asarray(eta, dtype=float)


def dcm_from_euler(eta) -> NDArray:
    """Body-to-navigation DCM ``C_b^n = Rz(yaw) Ry(pitch) Rx(roll)``.

    Accepts an :class:`EulerAngles` or an array of shape ``(..., 3)`` holding
    (roll, pitch, yaw). Pitch values in the gimbal-lock zone raise
    :class:`DomainError`.
    """
    eta = _euler_array(eta)
    if not np.all(np.isfinite(eta)):
        raise DomainError("Euler angles must be finite")
    if np.any(np.abs(eta[..., 1]) >= np.pi / 2 - GIMBAL_MARGIN):
        raise DomainError("pitch inside the gimbal-lock zone")
    sr, cr = np.sin(eta[..., 0]), np.cos(eta[..., 0])
    sp, cp = np.sin(eta[..., 1]), np.cos(eta[..., 1])
    sy, cy = np.sin(eta[..., 2]), np.cos(eta[..., 2])
    c = np.empty(eta.shape[:-1] + (3, 3))
    c[..., 0, 0] = cp * cy
    c[..., 0, 1] = sr * sp * cy - cr * sy
    c[..., 0, 2] = cr * sp * cy + sr * sy
    c[..., 1, 0] = cp * sy
    c[..., 1, 1] = sr * sp * sy + cr * cy
    c[..., 1, 2] = cr * sp * sy - sr * cy
    c[..., 2, 0] = -sp
    c[..., 2, 1] = sr * cp
    c[..., 2, 2] = cr * cp
    return c


def euler_from_dcm(c: ArrayLike) -> NDArray:
    """Recover (roll, pitch, yaw) from a body-to-navigation DCM.

    Roll and yaw are returned in (-pi, pi]. Matrices with ``|C[2, 0]| >= 1 - 1e-9``
    are too close to gimbal lock for a unique answer and raise :class:`DomainError`.
    """
    c = np.asarray(c, dtype=float)
    if np.any(np.abs(c[..., 2, 0]) >= 1.0 - 1e-9):
        raise DomainError("DCM too close to gimbal lock")
    roll = np.arctan2(c[..., 2, 1], c[..., 2, 2])
    pitch = -np.arcsin(c[..., 2, 0])
    yaw = np.arctan2(c[..., 1, 0], c[..., 0, 0])
    return np.stack([wrap_angle(roll), pitch, wrap_angle(yaw)], axis=-1)


def earth_rate_n(lat: ArrayLike, model: EarthModel = WGS84) -> NDArray:
    """Earth rotation rate resolved in the NED frame."""
    lat = _check_lat(lat)
    we = model.earth_rate
    return np.stack([we * np.cos(lat), np.zeros_like(lat), -we * np.sin(lat)], axis=-1)


def transport_rate(v: ArrayLike, lat: ArrayLike, h: ArrayLike, model: EarthModel = WGS84) -> NDArray:
    """Rotation rate of the NED frame relative to the Earth caused by travel."""
    lat = _check_lat(lat, POLAR_MARGIN)
    v = np.asarray(v, dtype=float)
    h = np.asarray(h, dtype=float)
    r_m, r_n = radii_of_curvature(lat, model)
    return np.stack(
        [
            v[..., 1] / (r_n + h),
            -v[..., 0] / (r_m + h),
            -v[..., 1] * np.tan(lat) / (r_n + h),
        ],
        axis=-1,
    )


def gravity_magnitude(lat: ArrayLike, h: ArrayLike, model: EarthModel = WGS84):
    """Normal gravity (Somigliana) with a linear free-air height correction."""
    lat = _check_lat(lat)
    h = np.asarray(h, dtype=float)
    if np.any(h <= -1000.0):
        raise DomainError("height below -1000 m")
    s2 = np.sin(lat) ** 2
    g0 = model.gravity_equator * (1.0 + model.gravity_k * s2) / np.sqrt(1.0 - model.e2 * s2)
    g = g0 - model.free_air * h
    return float(g) if g.ndim == 0 else g


def gravity_n(lat: ArrayLike, h: ArrayLike, model: EarthModel = WGS84) -> NDArray:
    """Gravity vector in NED, ``[0, 0, g(lat, h)]``."""
    g = np.asarray(gravity_magnitude(lat, h, model))
    z = np.zeros_like(g)
    return np.stack([z, z, g], axis=-1)


def d_matrix(lat: ArrayLike, h: ArrayLike, model: EarthModel = WGS84) -> NDArray:
    """Matrix mapping NED velocity to (lat, lon, height) rates."""
    lat = _check_lat(lat, POLAR_MARGIN)
    h = np.asarray(h, dtype=float)
    r_m, r_n = radii_of_curvature(lat, model)
    out = np.zeros(np.broadcast(lat, h).shape + (3, 3))
    out[..., 0, 0] = 1.0 / (r_m + h)
    out[..., 1, 1] = 1.0 / ((r_n + h) * np.cos(lat))
    out[..., 2, 2] = -1.0
    return out


def orthonormalize(c: ArrayLike) -> NDArray:
    """Gram-Schmidt on the columns of a 3x3 matrix (or a stack of them)."""
    c = np.asarray(c, dtype=float)
    x = c[..., :, 0] / np.linalg.norm(c[..., :, 0], axis=-1, keepdims=True)
    y = c[..., :, 1] - np.sum(x * c[..., :, 1], axis=-1, keepdims=True) * x
    y = y / np.linalg.norm(y, axis=-1, keepdims=True)
    z = np.cross(x, y)
    return np.stack([x, y, z], axis=-1)


def ned_from_geodetic(llh: ArrayLike, origin: GeodeticPosition, model: EarthModel = WGS84) -> NDArray:
    """Small-area tangent-plane map from (lat, lon, h) to NED meters about ``origin``.

    The map is linear with scale factors frozen at the origin, so
    :func:`geodetic_from_ned` inverts it exactly.
    """
    llh = np.asarray(llh, dtype=float)
    r_m0, r_n0 = radii_of_curvature(origin.lat, model)
    north = (llh[..., 0] - origin.lat) * (r_m0 + origin.height)
    east = wrap_angle(llh[..., 1] - origin.lon) * (r_n0 + origin.height) * math.cos(origin.lat)
    down = -(llh[..., 2] - origin.height)
    return np.stack([north, east, down], axis=-1)


def geodetic_from_ned(ned: ArrayLike, origin: GeodeticPosition, model: EarthModel = WGS84) -> NDArray:
    """Inverse of :func:`ned_from_geodetic`."""
    ned = np.asarray(ned, dtype=float)
    r_m0, r_n0 = radii_of_curvature(origin.lat, model)
    lat = origin.lat + ned[..., 0] / (r_m0 + origin.height)
    lon = origin.lon + ned[..., 1] / ((r_n0 + origin.height) * math.cos(origin.lat))
    h = origin.height - ned[..., 2]
    return np.stack([lat, lon, h], axis=-1)


def chart_velocity_scale(lat: ArrayLike, h: ArrayLike, origin: GeodeticPosition, model: EarthModel = WGS84) -> NDArray:
    """Per-axis factors mapping NED velocity to the rate of tangent-plane coordinates.

    ``d(ned)/dt = scale * v_n``. The factors equal one at the chart origin and
    deviate from it by O(distance / Earth radius) elsewhere.
    """
    lat = _check_lat(lat, POLAR_MARGIN)
    h = np.asarray(h, dtype=float)
    r_m, r_n = radii_of_curvature(lat, model)
    r_m0, r_n0 = radii_of_curvature(origin.lat, model)
    s_n = (r_m0 + origin.height) / (r_m + h)
    s_e = (r_n0 + origin.height) * math.cos(origin.lat) / ((r_n + h) * np.cos(lat))
    return np.stack([s_n, s_e, np.ones_like(s_n)], axis=-1)
