"""Composite training objective: weighted data misfit plus strapdown residuals.

Every function accepts plain arrays or :class:`pidr.autodiff.Tensor` values for
the network quantities and returns Tensors, so the same code serves numeric
evaluation (read ``.value``) and gradient computation.

Network positions live in a local tangent-plane chart (NED meters about the
trajectory origin). Differentiating the chart map gives
``d p_chart / dt = S(lat, h) * v_ned`` with the per-axis factors ``S`` of
:func:`pidr.frames.chart_velocity_scale`; the position residual compares the
network's position rate against that image of its velocity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import autodiff as ad
from . import frames
from .autodiff import Tensor
from .dataset import Normalizer, TrainingSet
from .frames import WGS84, EarthModel


@dataclass(frozen=True)
class LossWeights:
    w_p: float = 1.0
    w_v: float = 1.0
    w_eta: float = 1.0
    lambda_data: float = 1.0
    lambda_phys: float = 0.1

    def __post_init__(self):
        vals = (self.w_p, self.w_v, self.w_eta, self.lambda_data, self.lambda_phys)
        if not all(math.isfinite(x) and x >= 0 for x in vals):
            raise ValueError("loss weights must be finite and non-negative")
        if not (self.lambda_data or self.lambda_phys) or not (self.w_p or self.w_v or self.w_eta or self.lambda_phys):
            raise ValueError("loss weights must not all vanish")


@dataclass(frozen=True)
class LossBreakdown:
    data: float
    phys: float
    total: float
    phys_p: float = 0.0
    phys_v: float = 0.0
    phys_eta: float = 0.0


# --------------------------------------------------------------------------- data term


def data_loss(pred, target: ArrayLike, w: LossWeights = LossWeights()) -> Tensor:
    """Mean over samples of ``w_p|dp|^2 + w_v|dv|^2 + w_eta|wrap(d eta)|^2``.

    ``pred`` and ``target`` have shape (N, 9) ordered position, velocity, Euler.
    The wrap offset is a piecewise-constant shift, so it carries no gradient.
    """
    pred = ad.as_tensor(pred)
    target = np.asarray(target, dtype=float)
    if pred.ndim != 2 or pred.shape[1] != 9 or target.shape != pred.shape:
        raise ValueError(f"prediction {pred.shape} and target {target.shape} must both be (N, 9)")
    if len(target) == 0:
        raise ValueError("data loss of an empty batch")
    diff = ad.sub(pred, target)
    d_eta = diff[:, 6:9]
    shift = frames.wrap_angle(d_eta.value) - d_eta.value
    d_eta = ad.add(d_eta, shift)
    per = ad.add(
        ad.add(
            ad.mul(w.w_p, ad.tsum(ad.square(diff[:, 0:3]), axis=1)),
            ad.mul(w.w_v, ad.tsum(ad.square(diff[:, 3:6]), axis=1)),
        ),
        ad.mul(w.w_eta, ad.tsum(ad.square(d_eta), axis=1)),
    )
    return ad.mean(per)


# --------------------------------------------------------------------------- collocation


@dataclass
class CollocationBatch:
    """Collocation points with everything the residuals need besides the network.

    Attributes
    ----------
    traj : ndarray of int, shape (n,)
        Index of the source trajectory.
    t : ndarray, shape (n,)
        Physical time, seconds.
    u : ndarray, shape (n, 7)
        Normalized network input.
    time_scale : ndarray, shape (n,)
        ``d u[:, 0] / dt``.
    f, w : ndarray, shape (n, 3)
        IMU specific force and angular rate interpolated at ``t``.
    lat, h : ndarray, shape (n,)
        Reference latitude and height where the Earth terms are evaluated.
    vel_scale : ndarray, shape (n, 3)
        Chart velocity factors at the reference point.
    """

    traj: NDArray
    t: NDArray
    u: NDArray
    time_scale: NDArray
    f: NDArray
    w: NDArray
    lat: NDArray
    h: NDArray
    vel_scale: NDArray

    def __len__(self) -> int:
        return len(self.t)

    def subset(self, idx) -> "CollocationBatch":
        return CollocationBatch(*(getattr(self, k)[idx] for k in self.__dataclass_fields__))


def reference_points(traj, t: NDArray, model: EarthModel = WGS84):
    """Latitude and height of the GT track linearly interpolated at ``t``."""
    if traj.origin is None:
        raise ValueError(f"trajectory {traj.id}: GT origin is required for physics residuals")
    gt = traj.gt
    ned = np.stack([np.interp(t, gt.t, gt.position[:, k]) for k in range(3)], -1)
    llh = frames.geodetic_from_ned(ned, traj.origin, model)
    return llh[:, 0], llh[:, 2]


def collocation_at(ts: TrainingSet, traj_index: ArrayLike, t: ArrayLike, model: EarthModel = WGS84) -> CollocationBatch:
    """Build a batch at given (trajectory, time) pairs."""
    traj_index = np.asarray(traj_index, dtype=int).reshape(-1)
    t = np.asarray(t, dtype=float).reshape(-1)
    nz = ts.normalizer or Normalizer.identity()
    n = len(t)
    u, scale = np.empty((n, 7)), np.empty(n)
    f, w = np.empty((n, 3)), np.empty((n, 3))
    lat, h, vs = np.empty(n), np.empty(n), np.empty((n, 3))
    for k in np.unique(traj_index):
        sel = traj_index == k
        tr = ts.trajectories[k]
        tk = t[sel]
        if np.any(tk < tr.imu.t[0]) or np.any(tk > tr.imu.t[-1]):
            raise ValueError(f"collocation time outside trajectory {tr.id}")
        f[sel], w[sel] = tr.imu.interpolate(tk)
        u[sel] = nz.inputs(tk, f[sel], w[sel], tr.t_start, tr.duration)
        scale[sel] = 1.0 / tr.duration
        lat[sel], h[sel] = reference_points(tr, tk, model)
        vs[sel] = frames.chart_velocity_scale(lat[sel], h[sel], tr.origin, model)
    return CollocationBatch(traj_index, t, u, scale, f, w, lat, h, vs)


def sample_collocation(ts: TrainingSet, n_p: int, rng: np.random.Generator, model: EarthModel = WGS84) -> CollocationBatch:
    """Uniform draws over the concatenated time span of all trajectories."""
    if n_p < 1:
        raise ValueError("n_p must be at least 1")
    dur = np.array([tr.duration for tr in ts.trajectories])
    edges = np.concatenate([[0.0], np.cumsum(dur)])
    s = rng.random(n_p) * edges[-1]
    k = np.clip(np.searchsorted(edges, s, side="right") - 1, 0, len(dur) - 1)
    starts = np.array([tr.t_start for tr in ts.trajectories])
    t = np.minimum(starts[k] + (s - edges[k]), starts[k] + dur[k])
    return collocation_at(ts, k, t, model)


# --------------------------------------------------------------------------- residuals


def _col(x, k):
    return x[..., k]


def _cross(a, b):
    a0, a1, a2 = _col(a, 0), _col(a, 1), _col(a, 2)
    b0, b1, b2 = _col(b, 0), _col(b, 1), _col(b, 2)
    return ad.stack(
        [
            ad.sub(ad.mul(a1, b2), ad.mul(a2, b1)),
            ad.sub(ad.mul(a2, b0), ad.mul(a0, b2)),
            ad.sub(ad.mul(a0, b1), ad.mul(a1, b0)),
        ],
        axis=-1,
    )


def _skew(x):
    x = ad.as_tensor(x)
    x0, x1, x2 = _col(x, 0), _col(x, 1), _col(x, 2)
    z = np.zeros(x0.shape)
    return ad.stack(
        [
            ad.stack([z, ad.neg(x2), x1], -1),
            ad.stack([x2, z, ad.neg(x0)], -1),
            ad.stack([ad.neg(x1), x0, z], -1),
        ],
        -2,
    )


def _mat(rows):
    return ad.stack([ad.stack(r, -1) for r in rows], -2)


def _rotations(eta):
    r, p, y = _col(eta, 0), _col(eta, 1), _col(eta, 2)
    trig = [(ad.sin(a), ad.cos(a)) for a in (r, p, y)]
    return r.shape, trig


def dcm_tensor(eta) -> Tensor:
    """``C(eta) = Rz(yaw) Ry(pitch) Rx(roll)`` on the tape, shape (..., 3, 3)."""
    _, ((sr, cr), (sp, cp), (sy, cy)) = _rotations(ad.as_tensor(eta))
    m = ad.mul
    return _mat(
        [
            [m(cp, cy), ad.sub(m(m(sr, sp), cy), m(cr, sy)), ad.add(m(m(cr, sp), cy), m(sr, sy))],
            [m(cp, sy), ad.add(m(m(sr, sp), sy), m(cr, cy)), ad.sub(m(m(cr, sp), sy), m(sr, cy))],
            [ad.neg(sp), m(sr, cp), m(cr, cp)],
        ]
    )


def dcm_and_rate(eta, eta_dot):
    """``C(eta)`` and ``sum_k dC/d eta_k * eta_dot_k``.

    Finite for every angle, including pitch = +-90 deg.
    """
    eta, eta_dot = ad.as_tensor(eta), ad.as_tensor(eta_dot)
    shape, ((sr, cr), (sp, cp), (sy, cy)) = _rotations(eta)
    z, o = np.zeros(shape), np.ones(shape)
    rx = _mat([[o, z, z], [z, cr, ad.neg(sr)], [z, sr, cr]])
    ry = _mat([[cp, z, sp], [z, o, z], [ad.neg(sp), z, cp]])
    rz = _mat([[cy, ad.neg(sy), z], [sy, cy, z], [z, z, o]])
    drx = _mat([[z, z, z], [z, ad.neg(sr), ad.neg(cr)], [z, cr, ad.neg(sr)]])
    dry = _mat([[ad.neg(sp), z, cp], [z, z, z], [ad.neg(cp), z, ad.neg(sp)]])
    drz = _mat([[ad.neg(sy), ad.neg(cy), z], [cy, ad.neg(sy), z], [z, z, z]])
    ryx = ad.matmul(ry, rx)
    c = ad.matmul(rz, ryx)

    def rate(k):
        return ad.reshape(_col(eta_dot, k), shape + (1, 1))

    c_dot = ad.add(
        ad.add(
            ad.mul(ad.matmul(rz, ad.matmul(ry, drx)), rate(0)),
            ad.mul(ad.matmul(rz, ad.matmul(dry, rx)), rate(1)),
        ),
        ad.mul(ad.matmul(drz, ryx), rate(2)),
    )
    return c, c_dot


def _transport(v, lat, h, model):
    r_m, r_n = frames.radii_of_curvature(lat, model)
    vn, ve = _col(v, 0), _col(v, 1)
    return ad.stack(
        [ad.div(ve, r_n + h), ad.neg(ad.div(vn, r_m + h)), ad.neg(ad.mul(ve, np.tan(lat) / (r_n + h)))], -1
    )


def position_residual(p_dot, v, vel_scale: ArrayLike) -> Tensor:
    """``dp/dt - S v`` in chart meters."""
    return ad.sub(p_dot, ad.mul(v, np.asarray(vel_scale, dtype=float)))


def velocity_residual(v_dot, v, eta, f: ArrayLike, lat: ArrayLike, h: ArrayLike, model: EarthModel = WGS84) -> Tensor:
    """``dv/dt - (C f - (2 w_ie + w_en) x v + g)`` with ``w_en`` from the network velocity."""
    lat, h = np.asarray(lat, dtype=float), np.asarray(h, dtype=float)
    c = dcm_tensor(eta)
    f = np.asarray(f, dtype=float)
    cf = ad.reshape(ad.matmul(c, f[..., None]), f.shape)
    w_ie = frames.earth_rate_n(lat, model)
    coriolis = _cross(ad.add(2.0 * w_ie, _transport(v, lat, h, model)), v)
    g = frames.gravity_n(lat, h, model)
    return ad.sub(v_dot, ad.add(ad.sub(cf, coriolis), g))


def orientation_residual(
    eta, eta_dot, w: ArrayLike, v, lat: ArrayLike, h: ArrayLike, model: EarthModel = WGS84
) -> Tensor:
    """``dC/dt - (C Omega_ib - (Omega_ie + Omega_en) C)``, shape (..., 3, 3)."""
    lat, h = np.asarray(lat, dtype=float), np.asarray(h, dtype=float)
    c, c_dot = dcm_and_rate(eta, eta_dot)
    w_in = ad.add(frames.earth_rate_n(lat, model), _transport(v, lat, h, model))
    rhs = ad.sub(ad.matmul(c, _skew(np.asarray(w, dtype=float))), ad.matmul(_skew(w_in), c))
    return ad.sub(c_dot, rhs)


@dataclass
class Residuals:
    p: Tensor
    v: Tensor
    eta: Tensor


_MASK_2D_VEC = np.array([1.0, 1.0, 0.0])
_MASK_2D_MAT = np.outer(_MASK_2D_VEC, _MASK_2D_VEC)


def residuals(y, ydot, batch: CollocationBatch, model: EarthModel = WGS84, mode_2d: bool = False) -> Residuals:
    """All three residuals from network outputs ``y`` and ``d y / dt`` (both (n, 9))."""
    y, ydot = ad.as_tensor(y), ad.as_tensor(ydot)
    v, eta = y[:, 3:6], y[:, 6:9]
    r_p = position_residual(ydot[:, 0:3], v, batch.vel_scale)
    r_v = velocity_residual(ydot[:, 3:6], v, eta, batch.f, batch.lat, batch.h, model)
    r_eta = orientation_residual(eta, ydot[:, 6:9], batch.w, v, batch.lat, batch.h, model)
    if mode_2d:
        r_p, r_v, r_eta = ad.mul(r_p, _MASK_2D_VEC), ad.mul(r_v, _MASK_2D_VEC), ad.mul(r_eta, _MASK_2D_MAT)
    return Residuals(r_p, r_v, r_eta)


@dataclass
class PhysicsLoss:
    total: Tensor
    p: Tensor
    v: Tensor
    eta: Tensor


def physics_loss_from_residuals(res: Residuals) -> PhysicsLoss:
    """``mean(|r_p|^2 + |r_v|^2 + |r_eta|_F^2)`` with the three parts kept apart."""
    n = res.p.shape[0]
    if n == 0:
        raise ValueError("physics loss of an empty batch")
    lp = ad.div(ad.tsum(ad.square(res.p)), n)
    lv = ad.div(ad.tsum(ad.square(res.v)), n)
    le = ad.div(ad.tsum(ad.square(res.eta)), n)
    return PhysicsLoss(ad.add(ad.add(lp, lv), le), lp, lv, le)


def physics_loss(y, ydot, batch: CollocationBatch, model: EarthModel = WGS84, mode_2d: bool = False) -> PhysicsLoss:
    return physics_loss_from_residuals(residuals(y, ydot, batch, model, mode_2d))


def combine(data, phys, w: LossWeights) -> Tensor:
    """Differentiable ``lambda_data * data + lambda_phys * phys`` (either term may be None)."""
    terms = []
    if data is not None and w.lambda_data:
        terms.append(ad.mul(w.lambda_data, data))
    if phys is not None and w.lambda_phys:
        terms.append(ad.mul(w.lambda_phys, phys))
    if not terms:
        return Tensor(0.0)
    return terms[0] if len(terms) == 1 else ad.add(terms[0], terms[1])


def total_loss(data: float, phys: float | PhysicsLoss, w: LossWeights = LossWeights()) -> LossBreakdown:
    """Scalar breakdown with ``total = lambda_data * data + lambda_phys * phys``."""
    parts = (0.0, 0.0, 0.0)
    if isinstance(phys, PhysicsLoss):
        parts = (float(phys.p.value), float(phys.v.value), float(phys.eta.value))
        phys = float(phys.total.value)
    data, phys = float(ad.value(data)), float(ad.value(phys))
    if data < 0 or phys < 0:
        raise ValueError("loss components must be non-negative")
    return LossBreakdown(data, phys, w.lambda_data * data + w.lambda_phys * phys, *parts)
