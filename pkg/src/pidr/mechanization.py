"""Strapdown INS mechanization in the local-level NED frame.

:func:`nav_derivative` evaluates the continuous-time position, velocity and DCM
rates from plain numpy using :mod:`pidr.frames`. The integrator loop runs in a
numba kernel that re-implements the same rates for speed; the two are checked
against each other in the test-suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from numba import njit
from numpy.typing import ArrayLike, NDArray

from . import frames
from .frames import WGS84, DomainError, EarthModel, GeodeticPosition

SCHEMES = ("euler", "rk4")
HOLDS = ("zoh", "linear", "cubic")
MAX_STEP = 0.1


class InputError(ValueError):
    """Raised for malformed input sequences (ordering, shape, frame tags)."""


@dataclass(frozen=True)
class ImuSample:
    t: float
    specific_force: NDArray
    angular_rate: NDArray

    def __post_init__(self):
        f = np.asarray(self.specific_force, dtype=float).reshape(3)
        w = np.asarray(self.angular_rate, dtype=float).reshape(3)
        if not (math.isfinite(self.t) and np.all(np.isfinite(f)) and np.all(np.isfinite(w))):
            raise InputError("IMU sample must be finite")
        object.__setattr__(self, "specific_force", f)
        object.__setattr__(self, "angular_rate", w)


@dataclass
class ImuSeries:
    """A time-ordered block of IMU samples stored column-wise.

    Attributes
    ----------
    t : ndarray, shape (n,)
        Timestamps in seconds, nondecreasing.
    f : ndarray, shape (n, 3)
        Specific force in the body frame, m/s^2.
    w : ndarray, shape (n, 3)
        Angular rate of the body w.r.t. inertial space, rad/s.
    """

    t: NDArray
    f: NDArray
    w: NDArray

    def __post_init__(self):
        self.t = np.ascontiguousarray(self.t, dtype=float).reshape(-1)
        self.f = np.ascontiguousarray(self.f, dtype=float).reshape(-1, 3)
        self.w = np.ascontiguousarray(self.w, dtype=float).reshape(-1, 3)
        if not (len(self.t) == len(self.f) == len(self.w)):
            raise InputError("IMU columns have different lengths")
        if not (np.all(np.isfinite(self.t)) and np.all(np.isfinite(self.f)) and np.all(np.isfinite(self.w))):
            raise InputError("IMU samples must be finite")
        if np.any(np.diff(self.t) < 0):
            k = int(np.argmax(np.diff(self.t) < 0)) + 1
            raise InputError(f"IMU timestamps decrease at sample {k}")

    @classmethod
    def from_samples(cls, samples: Sequence[ImuSample]) -> "ImuSeries":
        return cls(
            np.array([s.t for s in samples]),
            np.array([s.specific_force for s in samples]),
            np.array([s.angular_rate for s in samples]),
        )

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> ImuSample:
        return ImuSample(float(self.t[i]), self.f[i].copy(), self.w[i].copy())

    def __iter__(self) -> Iterator[ImuSample]:
        return (self[i] for i in range(len(self)))

    @property
    def rate(self) -> float:
        """Nominal sample rate in Hz (inverse median interval)."""
        return 1.0 / float(np.median(np.diff(self.t)))

    def interpolate(self, t: ArrayLike):
        """Linear interpolation of both triads at times ``t``."""
        t = np.asarray(t, dtype=float)
        f = np.stack([np.interp(t, self.t, self.f[:, k]) for k in range(3)], axis=-1)
        w = np.stack([np.interp(t, self.t, self.w[:, k]) for k in range(3)], axis=-1)
        return f, w


@dataclass(frozen=True)
class NavState:
    position: GeodeticPosition
    velocity: NDArray
    attitude: NDArray

    def __post_init__(self):
        v = np.asarray(self.velocity, dtype=float).reshape(3)
        c = np.asarray(self.attitude, dtype=float).reshape(3, 3)
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(c))):
            raise DomainError("navigation state must be finite")
        object.__setattr__(self, "velocity", v)
        object.__setattr__(self, "attitude", c)

    @property
    def euler(self) -> NDArray:
        return frames.euler_from_dcm(self.attitude)

    def as_vector(self) -> NDArray:
        return np.concatenate([self.position.as_array(), self.velocity, self.attitude.reshape(9)])

    @classmethod
    def from_vector(cls, y: ArrayLike) -> "NavState":
        y = np.asarray(y, dtype=float)
        return cls(GeodeticPosition(y[0], y[1], y[2]), y[3:6], y[6:15].reshape(3, 3))


@dataclass
class Trajectory:
    """Time-indexed navigation solution.

    ``position`` holds (lat, lon, h) when ``frame == "geodetic"`` and NED meters
    about ``origin`` when ``frame == "ned"``.
    """

    t: NDArray
    position: NDArray
    velocity: NDArray
    attitude: NDArray
    frame: str
    origin: GeodeticPosition
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float).reshape(-1)
        self.position = np.asarray(self.position, dtype=float).reshape(-1, 3)
        self.velocity = np.asarray(self.velocity, dtype=float).reshape(-1, 3)
        self.attitude = np.asarray(self.attitude, dtype=float).reshape(-1, 3, 3)
        n = len(self.t)
        if not (len(self.position) == len(self.velocity) == len(self.attitude) == n):
            raise InputError("trajectory columns have different lengths")
        if self.frame not in ("geodetic", "ned"):
            raise InputError(f"unknown frame tag {self.frame!r}")
        if n > 1 and np.any(np.diff(self.t) <= 0):
            raise InputError("trajectory timestamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def from_euler(cls, t, position, velocity, euler, frame="ned", origin=None, **kw) -> "Trajectory":
        # Eulers read from logs are trusted; skip the gimbal check of dcm_from_euler.
        euler = np.asarray(euler, dtype=float)
        if origin is None:
            origin = GeodeticPosition(0.0, 0.0, 0.0)
        return cls(t, position, velocity, _dcm_unchecked(euler), frame, origin, **kw)

    @property
    def euler(self) -> NDArray:
        return frames.euler_from_dcm(self.attitude)

    def ned_positions(self, model: EarthModel = WGS84) -> NDArray:
        if self.frame == "ned":
            return self.position
        return frames.ned_from_geodetic(self.position, self.origin, model)

    @property
    def path_length(self) -> float:
        """Sum of 3-D position increments in meters."""
        p = self.ned_positions()
        return float(np.sum(np.linalg.norm(np.diff(p, axis=0), axis=1)))

    def state(self, i: int) -> NavState:
        if self.frame != "geodetic":
            raise InputError("NavState requires a geodetic trajectory")
        lat, lon, h = self.position[i]
        return NavState(GeodeticPosition(lat, lon, h), self.velocity[i], self.attitude[i])


def _dcm_unchecked(euler):
    sr, cr = np.sin(euler[..., 0]), np.cos(euler[..., 0])
    sp, cp = np.sin(euler[..., 1]), np.cos(euler[..., 1])
    sy, cy = np.sin(euler[..., 2]), np.cos(euler[..., 2])
    return np.stack(
        [
            np.stack([cp * cy, sr * sp * cy - cr * sy, cr * sp * cy + sr * sy], -1),
            np.stack([cp * sy, sr * sp * sy + cr * cy, cr * sp * sy - sr * cy], -1),
            np.stack([-sp, sr * cp, cr * cp], -1),
        ],
        -2,
    )


def nav_derivative(state: NavState, imu: ImuSample, model: EarthModel = WGS84):
    """Continuous-time strapdown rates.

    Returns
    -------
    p_dot : ndarray, shape (3,)
        (lat, lon, height) rates in rad/s, rad/s, m/s.
    v_dot : ndarray, shape (3,)
        NED acceleration in m/s^2.
    c_dot : ndarray, shape (3, 3)
        Rate of the body-to-NED DCM.
    """
    lat, h = state.position.lat, state.position.height
    v, c = state.velocity, state.attitude
    w_ie = frames.earth_rate_n(lat, model)
    w_en = frames.transport_rate(v, lat, h, model)
    p_dot = frames.d_matrix(lat, h, model) @ v
    v_dot = c @ imu.specific_force - np.cross(2.0 * w_ie + w_en, v) + frames.gravity_n(lat, h, model)
    c_dot = c @ frames.skew(imu.angular_rate) - frames.skew(w_ie + w_en) @ c
    return p_dot, v_dot, c_dot


def _constants(model: EarthModel) -> NDArray:
    return np.array(
        [
            model.semi_major_axis,
            model.e2,
            model.earth_rate,
            model.gravity_equator,
            model.gravity_k,
            model.free_air,
        ]
    )


# --------------------------------------------------------------------------- kernels
# State vector layout: [lat, lon, h, vN, vE, vD, C00, C01, ..., C22] (row-major DCM).


@njit(cache=True)
def _rates(y, f, w, k, mode_2d):
    a, e2, we, ge, gk, fa = k[0], k[1], k[2], k[3], k[4], k[5]
    lat, h = y[0], y[2]
    vn, ve, vd = y[3], y[4], y[5]
    s, c = math.sin(lat), math.cos(lat)
    den = 1.0 - e2 * s * s
    rn = a / math.sqrt(den)
    rm = a * (1.0 - e2) / (den * math.sqrt(den))
    g = ge * (1.0 + gk * s * s) / math.sqrt(den) - fa * h

    wie0, wie2 = we * c, -we * s
    wen0 = ve / (rn + h)
    wen1 = -vn / (rm + h)
    wen2 = -ve * (s / c) / (rn + h)
    win0, win1, win2 = wie0 + wen0, wen1, wie2 + wen2
    cor0, cor1, cor2 = 2.0 * wie0 + wen0, wen1, 2.0 * wie2 + wen2

    out = np.empty(15)
    out[0] = vn / (rm + h)
    out[1] = ve / ((rn + h) * c)
    out[2] = -vd

    fn0 = y[6] * f[0] + y[7] * f[1] + y[8] * f[2]
    fn1 = y[9] * f[0] + y[10] * f[1] + y[11] * f[2]
    fn2 = y[12] * f[0] + y[13] * f[1] + y[14] * f[2]
    out[3] = fn0 - (cor1 * vd - cor2 * ve)
    out[4] = fn1 - (cor2 * vn - cor0 * vd)
    out[5] = fn2 - (cor0 * ve - cor1 * vn) + g
    if mode_2d:
        out[2] = 0.0
        out[5] = 0.0

    # C * skew(w) - skew(w_in) * C
    for i in range(3):
        ci0, ci1, ci2 = y[6 + 3 * i], y[7 + 3 * i], y[8 + 3 * i]
        out[6 + 3 * i] = ci1 * w[2] - ci2 * w[1]
        out[7 + 3 * i] = -ci0 * w[2] + ci2 * w[0]
        out[8 + 3 * i] = ci0 * w[1] - ci1 * w[0]
    for j in range(3):
        c0j, c1j, c2j = y[6 + j], y[9 + j], y[12 + j]
        out[6 + j] -= -win2 * c1j + win1 * c2j
        out[9 + j] -= win2 * c0j - win0 * c2j
        out[12 + j] -= -win1 * c0j + win0 * c1j
    return out


@njit(cache=True)
def _orthonormalize(y):
    x0, x1, x2 = y[6], y[9], y[12]
    n = math.sqrt(x0 * x0 + x1 * x1 + x2 * x2)
    x0, x1, x2 = x0 / n, x1 / n, x2 / n
    d = x0 * y[7] + x1 * y[10] + x2 * y[13]
    y0, y1, y2 = y[7] - d * x0, y[10] - d * x1, y[13] - d * x2
    n = math.sqrt(y0 * y0 + y1 * y1 + y2 * y2)
    y0, y1, y2 = y0 / n, y1 / n, y2 / n
    y[6], y[9], y[12] = x0, x1, x2
    y[7], y[10], y[13] = y0, y1, y2
    y[8] = x1 * y2 - x2 * y1
    y[11] = x2 * y0 - x0 * y2
    y[14] = x0 * y1 - x1 * y0


@njit(cache=True)
def _step(y, f0, w0, fm, wm, f1, w1, dt, rk4, k, mode_2d):
    if rk4:
        k1 = _rates(y, f0, w0, k, mode_2d)
        k2 = _rates(y + 0.5 * dt * k1, fm, wm, k, mode_2d)
        k3 = _rates(y + 0.5 * dt * k2, fm, wm, k, mode_2d)
        k4 = _rates(y + dt * k3, f1, w1, k, mode_2d)
        out = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    else:
        out = y + dt * _rates(y, f0, w0, k, mode_2d)
    _orthonormalize(out)
    return out


@njit(cache=True)
def _lagrange_mid(t, x, i, tm):
    # 4-point Lagrange interpolation around the interval [t[i], t[i+1]].
    n = len(t)
    lo = i - 1
    if lo < 0:
        lo = 0
    if lo + 3 > n - 1:
        lo = n - 4
    out = np.zeros(3)
    for a in range(lo, lo + 4):
        wgt = 1.0
        for b in range(lo, lo + 4):
            if b != a:
                wgt *= (tm - t[b]) / (t[a] - t[b])
        for j in range(3):
            out[j] += wgt * x[a, j]
    return out


@njit(cache=True)
def _integrate(y0, t, f, w, rk4, hold, k, mode_2d):
    # hold: 0 = zero-order, 1 = linear, 2 = cubic
    n = len(t)
    out = np.empty((n, 15))
    y = y0.copy()
    if mode_2d:
        y[5] = 0.0
    out[0] = y
    for i in range(n - 1):
        dt = t[i + 1] - t[i]
        if hold == 0:
            fm, wm, f1, w1 = f[i], w[i], f[i], w[i]
        else:
            f1, w1 = f[i + 1], w[i + 1]
            if hold == 2 and n >= 4:
                tm = t[i] + 0.5 * dt
                fm = _lagrange_mid(t, f, i, tm)
                wm = _lagrange_mid(t, w, i, tm)
            else:
                fm = 0.5 * (f[i] + f[i + 1])
                wm = 0.5 * (w[i] + w[i + 1])
        y = _step(y, f[i], w[i], fm, wm, f1, w1, dt, rk4, k, mode_2d)
        out[i + 1] = y
    return out


# --------------------------------------------------------------------------- public API


def _check_scheme(scheme: str):
    if scheme not in SCHEMES:
        raise DomainError(f"unknown integration scheme {scheme!r}; expected one of {SCHEMES}")


def integrate_step(
    state: NavState,
    imu: ImuSample,
    dt: float,
    scheme: str = "rk4",
    model: EarthModel = WGS84,
    mode_2d: bool = False,
) -> NavState:
    """Advance ``state`` by one step with the IMU sample held constant over ``dt``."""
    _check_scheme(scheme)
    if not (math.isfinite(dt) and 0 < dt <= MAX_STEP):
        raise DomainError(f"step {dt} outside (0, {MAX_STEP}] s")
    frames._check_lat(state.position.lat, frames.POLAR_MARGIN)
    f, w = imu.specific_force, imu.angular_rate
    y = _step(state.as_vector(), f, w, f, w, f, w, dt, scheme == "rk4", _constants(model), mode_2d)
    return NavState.from_vector(y)


def dead_reckon(
    init: NavState,
    imu: ImuSeries,
    scheme: str = "rk4",
    *,
    hold: str = "cubic",
    mode_2d: bool = False,
    model: EarthModel = WGS84,
) -> Trajectory:
    """Pure inertial navigation from ``init`` through every sample of ``imu``.

    Parameters
    ----------
    init : NavState
        State at ``imu.t[0]``.
    imu : ImuSeries
        At least two samples with strictly increasing timestamps, spaced at most
        0.1 s apart.
    scheme : {"rk4", "euler"}
        Integration scheme.
    hold : {"cubic", "linear", "zoh"}
        How RK4 evaluates the IMU inside a step. ``"zoh"`` holds sample ``k``
        across the whole step; ``"cubic"`` interpolates the mid-step value from
        the four surrounding samples, which keeps RK4 fourth order on smooth
        motion.
    mode_2d : bool
        Freeze the vertical channel (down velocity and height).

    Returns
    -------
    Trajectory
        Geodetic-frame solution, one state per IMU timestamp.
    """
    _check_scheme(scheme)
    if hold not in HOLDS:
        raise DomainError(f"unknown hold {hold!r}; expected one of {HOLDS}")
    if not isinstance(imu, ImuSeries):
        imu = ImuSeries.from_samples(list(imu))
    if len(imu) < 2:
        raise InputError("dead reckoning needs at least two IMU samples")
    dts = np.diff(imu.t)
    if np.any(dts <= 0):
        raise InputError(f"IMU timestamps not strictly increasing at sample {int(np.argmax(dts <= 0)) + 1}")
    if np.any(dts > MAX_STEP * (1 + 1e-9)):
        raise DomainError(f"IMU interval exceeds {MAX_STEP} s")
    frames._check_lat(init.position.lat, frames.POLAR_MARGIN)
    ys = _integrate(
        init.as_vector(),
        imu.t,
        imu.f,
        imu.w,
        scheme == "rk4",
        HOLDS.index(hold),
        _constants(model),
        mode_2d,
    )
    if not np.all(np.isfinite(ys)):
        raise DomainError("integration diverged")
    return Trajectory(imu.t.copy(), ys[:, :3], ys[:, 3:6], ys[:, 6:].reshape(-1, 3, 3), "geodetic", init.position)


def geodetic_to_local_ned(traj: Trajectory, origin: GeodeticPosition | None = None, model: EarthModel = WGS84) -> Trajectory:
    """Express a geodetic trajectory in NED meters about ``origin``."""
    if traj.frame != "geodetic":
        raise InputError("expected a geodetic trajectory")
    origin = traj.origin if origin is None else origin
    ned = frames.ned_from_geodetic(traj.position, origin, model)
    return Trajectory(traj.t.copy(), ned, traj.velocity.copy(), traj.attitude.copy(), "ned", origin, dict(traj.meta))


def local_ned_to_geodetic(traj: Trajectory, model: EarthModel = WGS84) -> Trajectory:
    """Inverse of :func:`geodetic_to_local_ned`."""
    if traj.frame != "ned":
        raise InputError("expected an NED trajectory")
    llh = frames.geodetic_from_ned(traj.position, traj.origin, model)
    return Trajectory(traj.t.copy(), llh, traj.velocity.copy(), traj.attitude.copy(), "geodetic", traj.origin, dict(traj.meta))
