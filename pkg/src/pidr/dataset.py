"""IMU / ground-truth CSV ingestion, time alignment and training-set assembly.

File layout of one trajectory directory::

    imu.csv   t,fx,fy,fz,wx,wy,wz          (s, m/s^2, rad/s)
    gt.csv    t,pn,pe,pd,vn,ve,vd,roll,pitch,yaw   (s, m, m/s, rad)
    meta.txt  origin_lat=..., origin_lon=..., origin_h=...  (rad, rad, m)

GT positions are NED meters about the origin stored in ``meta.txt``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import frames
from .frames import GeodeticPosition
from .mechanization import ImuSample, ImuSeries, InputError, Trajectory

log = logging.getLogger(__name__)

IMU_HEADER = ("t", "fx", "fy", "fz", "wx", "wy", "wz")
GT_HEADER = ("t", "pn", "pe", "pd", "vn", "ve", "vd", "roll", "pitch", "yaw")
META_KEYS = ("origin_lat", "origin_lon", "origin_h")
FLOAT_FMT = "%.17g"


class DatasetError(InputError):
    """Malformed or inconsistent dataset file."""


@dataclass
class GroundTruth:
    """Reference navigation solution in local NED meters.

    Attributes
    ----------
    t : ndarray, shape (n,)
    position : ndarray, shape (n, 3)
        NED meters about ``origin``.
    velocity : ndarray, shape (n, 3)
        NED velocity, m/s.
    euler : ndarray, shape (n, 3)
        Roll, pitch, yaw in radians.
    origin : GeodeticPosition or None
    """

    t: NDArray
    position: NDArray
    velocity: NDArray
    euler: NDArray
    origin: GeodeticPosition | None = None

    def __post_init__(self):
        self.t = np.ascontiguousarray(self.t, dtype=float).reshape(-1)
        n = len(self.t)
        for name in ("position", "velocity", "euler"):
            a = np.ascontiguousarray(getattr(self, name), dtype=float).reshape(-1, 3)
            if len(a) != n:
                raise DatasetError(f"GT {name} has {len(a)} rows, expected {n}")
            setattr(self, name, a)
        if not all(np.all(np.isfinite(a)) for a in (self.t, self.position, self.velocity, self.euler)):
            raise DatasetError("GT values must be finite")
        _check_increasing(self.t, "GT")

    @classmethod
    def from_table(cls, table: ArrayLike, origin: GeodeticPosition | None = None) -> "GroundTruth":
        a = np.asarray(table, dtype=float).reshape(-1, len(GT_HEADER))
        return cls(a[:, 0], a[:, 1:4], a[:, 4:7], a[:, 7:10], origin)

    def table(self) -> NDArray:
        return np.column_stack([self.t, self.position, self.velocity, self.euler])

    def __len__(self) -> int:
        return len(self.t)

    def select(self, idx) -> "GroundTruth":
        return GroundTruth(self.t[idx], self.position[idx], self.velocity[idx], self.euler[idx], self.origin)

    def to_trajectory(self) -> Trajectory:
        return Trajectory.from_euler(self.t, self.position, self.velocity, self.euler, frame="ned", origin=self.origin)

    def subsample(self, rate: float) -> "GroundTruth":
        """Keep the first row and then every row at least ``1/rate`` s after the last kept one."""
        if not rate > 0:
            raise DatasetError("subsample rate must be positive")
        keep, last = [], -math.inf
        period = 1.0 / rate
        for i, ti in enumerate(self.t):
            if ti - last >= period * (1 - 1e-9):
                keep.append(i)
                last = ti
        return self.select(np.array(keep, dtype=int))


def _check_increasing(t: NDArray, what: str):
    bad = np.flatnonzero(np.diff(t) <= 0)
    if len(bad):
        k = int(bad[0]) + 2
        raise DatasetError(f"{what} timestamps not strictly increasing at row {k}")


# --------------------------------------------------------------------------- CSV I/O


def _read_table(path: str | Path, header: Sequence[str]) -> NDArray:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            got = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        if tuple(h.strip() for h in got) != tuple(header):
            raise DatasetError(f"{path}: line 1: header {','.join(got)!r}, expected {','.join(header)!r}")
        rows = []
        for row_no, row in enumerate(reader, start=1):
            line = row_no + 1
            if not row or all(not c.strip() for c in row):
                raise DatasetError(f"{path}: line {line} (row {row_no}): empty row")
            if len(row) != len(header):
                raise DatasetError(f"{path}: line {line} (row {row_no}): {len(row)} fields, expected {len(header)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise DatasetError(f"{path}: line {line} (row {row_no}): non-numeric field") from None
            if not all(math.isfinite(v) for v in vals):
                raise DatasetError(f"{path}: line {line} (row {row_no}): non-finite value")
            rows.append(vals)
    a = np.array(rows, dtype=float).reshape(-1, len(header))
    bad = np.flatnonzero(np.diff(a[:, 0]) <= 0)
    if len(bad):
        k = int(bad[0]) + 2
        raise DatasetError(f"{path}: line {k + 1} (row {k}): timestamp not strictly increasing")
    return a


def _write_table(path: str | Path, header: Sequence[str], table: NDArray):
    np.savetxt(path, table, fmt=FLOAT_FMT, delimiter=",", header=",".join(header), comments="")


def load_imu_csv(path: str | Path) -> ImuSeries:
    """Read ``imu.csv``. Rows are numbered from 1 after the header in error messages."""
    a = _read_table(path, IMU_HEADER)
    return ImuSeries(a[:, 0], a[:, 1:4], a[:, 4:7])


def write_imu_csv(path: str | Path, imu: ImuSeries):
    _write_table(path, IMU_HEADER, np.column_stack([imu.t, imu.f, imu.w]))


def load_gt_csv(path: str | Path, origin: GeodeticPosition | None = None) -> GroundTruth:
    return GroundTruth.from_table(_read_table(path, GT_HEADER), origin)


def write_gt_csv(path: str | Path, gt: GroundTruth | NDArray):
    table = gt.table() if isinstance(gt, GroundTruth) else np.asarray(gt, dtype=float)
    _write_table(path, GT_HEADER, table)


def read_metadata(path: str | Path) -> GeodeticPosition:
    """Parse the ``key=value`` origin sidecar."""
    path = Path(path)
    vals = {}
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise DatasetError(f"{path}: line {line_no}: expected key=value")
        try:
            vals[key.strip()] = float(value)
        except ValueError:
            raise DatasetError(f"{path}: line {line_no}: non-numeric value for {key.strip()!r}") from None
    missing = [k for k in META_KEYS if k not in vals]
    if missing:
        raise DatasetError(f"{path}: missing keys {missing}")
    return GeodeticPosition(vals["origin_lat"], vals["origin_lon"], vals["origin_h"])


def write_metadata(path: str | Path, origin: GeodeticPosition):
    lines = [f"{k}={FLOAT_FMT % v}" for k, v in zip(META_KEYS, origin.as_array())]
    Path(path).write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------- alignment


@dataclass(frozen=True)
class AlignedSample:
    t: float
    imu: ImuSample
    position: NDArray
    velocity: NDArray
    euler: NDArray


@dataclass
class Alignment:
    """GT rows paired with their nearest IMU sample (column-wise storage).

    ``t`` holds GT timestamps; ``imu_index`` points into the source IMU series.
    ``dropped`` counts GT rows outside the IMU time range.
    """

    t: NDArray
    imu_index: NDArray
    imu_t: NDArray
    f: NDArray
    w: NDArray
    position: NDArray
    velocity: NDArray
    euler: NDArray
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, i: int) -> AlignedSample:
        return AlignedSample(
            float(self.t[i]),
            ImuSample(float(self.imu_t[i]), self.f[i].copy(), self.w[i].copy()),
            self.position[i].copy(),
            self.velocity[i].copy(),
            self.euler[i].copy(),
        )

    def __iter__(self) -> Iterator[AlignedSample]:
        return (self[i] for i in range(len(self)))

    @property
    def targets(self) -> NDArray:
        """(n, 9) stacked position, velocity, euler."""
        return np.column_stack([self.position, self.velocity, self.euler])


def nearest_index(grid: NDArray, t: ArrayLike) -> NDArray:
    """Index of the nearest ``grid`` point; exact ties go to the earlier sample."""
    t = np.asarray(t, dtype=float)
    hi = np.clip(np.searchsorted(grid, t, side="left"), 1, len(grid) - 1)
    lo = hi - 1
    take_hi = (grid[hi] - t) < (t - grid[lo])
    out = np.where(take_hi, hi, lo)
    if len(grid) == 1:
        out = np.zeros_like(out)
    return out


def align(imu: ImuSeries, gt: GroundTruth) -> Alignment:
    """Pair each GT row inside the IMU time span with its nearest IMU sample."""
    if len(imu) == 0 or len(gt) == 0:
        raise DatasetError("cannot align empty series")
    inside = (gt.t >= imu.t[0]) & (gt.t <= imu.t[-1])
    dropped = int(np.count_nonzero(~inside))
    if not inside.any():
        raise DatasetError(
            f"IMU [{imu.t[0]}, {imu.t[-1]}] s and GT [{gt.t[0]}, {gt.t[-1]}] s do not overlap"
        )
    if dropped:
        log.info("align: dropped %d GT rows outside the IMU time range", dropped)
    g = gt.select(inside)
    idx = nearest_index(imu.t, g.t)
    return Alignment(
        g.t, idx, imu.t[idx], imu.f[idx], imu.w[idx], g.position, g.velocity, g.euler, dropped
    )


# --------------------------------------------------------------------------- training sets


@dataclass
class TrajectoryData:
    """One trajectory: raw IMU, full GT, and the supervised aligned pairs."""

    id: str
    imu: ImuSeries
    gt: GroundTruth
    aligned: Alignment = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if len(self.imu) < 2:
            raise DatasetError(f"trajectory {self.id}: needs at least two IMU samples")
        if self.aligned is None:
            self.aligned = align(self.imu, self.gt)
        if len(self.aligned) == 0:
            raise DatasetError(f"trajectory {self.id}: no aligned samples")

    @property
    def t_start(self) -> float:
        return float(self.imu.t[0])

    @property
    def duration(self) -> float:
        return float(self.imu.t[-1] - self.imu.t[0])

    @property
    def origin(self) -> GeodeticPosition | None:
        return self.gt.origin

    def with_gt(self, gt: GroundTruth) -> "TrajectoryData":
        return TrajectoryData(self.id, self.imu, gt)


def load_trajectory(directory: str | Path, id: str | None = None) -> TrajectoryData:
    """Load ``imu.csv``, ``gt.csv`` and ``meta.txt`` from ``directory``."""
    d = Path(directory)
    origin = read_metadata(d / "meta.txt")
    imu = load_imu_csv(d / "imu.csv")
    gt = load_gt_csv(d / "gt.csv", origin)
    return TrajectoryData(id if id is not None else d.name, imu, gt)


@dataclass
class Normalizer:
    """Affine input/output scaling shared by training and inference.

    Inputs: time maps to ``(t - t_start) / duration`` per trajectory; IMU
    channels to zero mean and unit variance over the training samples.
    Outputs: the network emits ``(y - out_mean) / out_std``.
    """

    in_mean: NDArray
    in_std: NDArray
    out_mean: NDArray
    out_std: NDArray

    def __post_init__(self):
        for name, n in (("in_mean", 6), ("in_std", 6), ("out_mean", 9), ("out_std", 9)):
            a = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if a.shape != (n,) or not np.all(np.isfinite(a)):
                raise DatasetError(f"normalizer {name} must be {n} finite values")
            setattr(self, name, a)
        if np.any(self.in_std <= 0) or np.any(self.out_std <= 0):
            raise DatasetError("normalizer scales must be positive")

    @classmethod
    def identity(cls) -> "Normalizer":
        return cls(np.zeros(6), np.ones(6), np.zeros(9), np.ones(9))

    @classmethod
    def fit(cls, trajectories: Sequence[TrajectoryData]) -> "Normalizer":
        if not trajectories:
            raise DatasetError("cannot fit a normalizer on no trajectories")
        x = np.concatenate([np.column_stack([tr.imu.f, tr.imu.w]) for tr in trajectories])
        y = np.concatenate([tr.aligned.targets for tr in trajectories])
        in_mean, in_std = x.mean(0), _safe_std(x, IMU_HEADER[1:], warn=True)
        out_mean, out_std = y.mean(0), _safe_std(y, GT_HEADER[1:], warn=False)
        return cls(in_mean, in_std, out_mean, out_std)

    def inputs(self, t: ArrayLike, f: ArrayLike, w: ArrayLike, t_start: float, duration: float) -> NDArray:
        """Stack normalized ``(t, f, w)`` into an (n, 7) network input."""
        t = np.asarray(t, dtype=float).reshape(-1, 1)
        x = np.column_stack([np.asarray(f, dtype=float).reshape(-1, 3), np.asarray(w, dtype=float).reshape(-1, 3)])
        return np.column_stack([(t - t_start) / duration, (x - self.in_mean) / self.in_std])

    def outputs(self, raw: NDArray) -> NDArray:
        return self.out_mean + self.out_std * raw

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("in_mean", "in_std", "out_mean", "out_std")}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(d["in_mean"], d["in_std"], d["out_mean"], d["out_std"])


def _safe_std(x: NDArray, names: Sequence[str], warn: bool) -> NDArray:
    sd = x.std(0)
    for k in np.flatnonzero(~(sd > 1e-12 * np.maximum(1.0, np.abs(x).max(0)))):
        if warn:
            log.warning("channel %s has zero variance; using scale 1", names[k])
        sd[k] = 1.0
    return sd


@dataclass
class TrainingSet:
    trajectories: list
    normalizer: Normalizer | None = None

    def __post_init__(self):
        if not self.trajectories:
            raise DatasetError("training set needs at least one trajectory")
        ids = [tr.id for tr in self.trajectories]
        if len(set(ids)) != len(ids):
            raise DatasetError("trajectory ids must be unique")

    def __len__(self) -> int:
        return len(self.trajectories)

    @property
    def n_samples(self) -> int:
        return sum(len(tr.aligned) for tr in self.trajectories)

    def normalized_imu(self) -> NDArray:
        """All training IMU samples after input scaling, shape (n, 6)."""
        nz = self.normalizer or Normalizer.identity()
        x = np.concatenate([np.column_stack([tr.imu.f, tr.imu.w]) for tr in self.trajectories])
        return (x - nz.in_mean) / nz.in_std


def normalize_inputs(ts: TrainingSet) -> TrainingSet:
    """Fit a :class:`Normalizer` on ``ts`` and return a set carrying it."""
    return TrainingSet(list(ts.trajectories), Normalizer.fit(ts.trajectories))
