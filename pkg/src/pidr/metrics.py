"""Trajectory error metrics and multi-method comparison reports.

Predictions are resampled to the GT timestamps by nearest neighbour (ties go to
the earlier sample) and compared in the GT's local NED frame.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import frames
from .dataset import GroundTruth, nearest_index
from .mechanization import Trajectory

METRICS = ("PRMSE", "MATE", "TDE", "FDE")
UNITS = {"PRMSE": "m", "MATE": "m", "TDE": "%", "FDE": "m"}
ID_COLUMN = "trajectory"


class MetricsError(ValueError):
    pass


def _track(x, origin=None) -> tuple[NDArray, NDArray]:
    """(t, NED positions) of a Trajectory, GroundTruth or (t, positions) pair."""
    if isinstance(x, GroundTruth):
        return x.t, x.position
    if isinstance(x, Trajectory):
        if x.frame == "geodetic":
            o = origin if origin is not None else x.origin
            if o is None:
                raise MetricsError("geodetic trajectory needs an origin to compare in NED")
            return x.t, frames.ned_from_geodetic(x.position, o)
        return x.t, x.position
    t, p = x
    return np.asarray(t, dtype=float), np.asarray(p, dtype=float).reshape(-1, 3)


def resample(pred, gt) -> tuple[NDArray, NDArray, NDArray]:
    """Pair GT timestamps inside the prediction span with the nearest prediction.

    Returns (t, predicted positions, GT positions) at the common timestamps.
    """
    origin = getattr(gt, "origin", None)
    tp, pp = _track(pred, origin)
    tg, pg = _track(gt)
    if len(tp) == 0 or len(tg) == 0:
        raise MetricsError("empty trajectory")
    inside = (tg >= tp[0]) & (tg <= tp[-1])
    if not inside.any():
        raise MetricsError("prediction and GT do not overlap in time")
    tg, pg = tg[inside], pg[inside]
    return tg, pp[nearest_index(tp, tg)], pg


def ate_series(pred, gt) -> tuple[NDArray, NDArray]:
    """GT timestamps and absolute position errors at them."""
    t, pp, pg = resample(pred, gt)
    return t, np.linalg.norm(pp - pg, axis=1)


def ate(pred, gt) -> NDArray:
    """Absolute trajectory error per common GT timestamp, meters."""
    return ate_series(pred, gt)[1]


def _nonempty(series) -> NDArray:
    a = np.asarray(series, dtype=float).reshape(-1)
    if len(a) == 0:
        raise MetricsError("empty error series")
    return a


def prmse(series: ArrayLike) -> float:
    a = _nonempty(series)
    # scale first so tiny errors do not underflow when squared
    s = np.max(np.abs(a))
    if s == 0:
        return 0.0
    b = a / s
    return float(s * np.sqrt(np.mean(b * b)))


def mate(series: ArrayLike) -> float:
    return float(np.mean(_nonempty(series)))


def path_length(gt) -> float:
    """Distance travelled along the GT track (sum of 3-D increments), meters."""
    _, p = _track(gt)
    return float(np.sum(np.linalg.norm(np.diff(p, axis=0), axis=1)))


def tde(prmse_value: float, gt) -> float:
    """PRMSE as a percentage of the distance travelled; ``gt`` may be a length."""
    d = float(gt) if isinstance(gt, (int, float)) else path_length(gt)
    if not d > 0:
        raise MetricsError("TDE undefined for a zero-length trajectory")
    return prmse_value / d * 100.0


def fde(pred, gt) -> float:
    """Position error at the last common GT timestamp, meters."""
    _, pp, pg = resample(pred, gt)
    return float(np.linalg.norm(pp[-1] - pg[-1]))


@dataclass
class TrajectoryMetrics:
    id: str
    PRMSE: float
    MATE: float
    TDE: float
    FDE: float
    t: NDArray | None = field(default=None, repr=False)
    ate: NDArray | None = field(default=None, repr=False)

    def value(self, metric: str) -> float:
        return getattr(self, metric)


def evaluate(pred, gt, id: str = "") -> TrajectoryMetrics:
    t, e = ate_series(pred, gt)
    p = prmse(e)
    return TrajectoryMetrics(id, p, mate(e), tde(p, gt), float(e[-1]), t, e)


# --------------------------------------------------------------------------- report files


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def write_metrics_csv(path: str | Path, rows: Sequence[TrajectoryMetrics]):
    """One row per trajectory: ``trajectory,PRMSE,MATE,TDE,FDE``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((ID_COLUMN,) + METRICS)
        for r in rows:
            w.writerow([r.id] + [format_float(r.value(m)) for m in METRICS])


def read_metrics_csv(path: str | Path) -> list:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != (ID_COLUMN,) + METRICS:
            raise MetricsError(f"{path}: header must be {','.join((ID_COLUMN,) + METRICS)}")
        rows = []
        for line, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise MetricsError(f"{path}: line {line}: expected 5 fields")
            try:
                rows.append(TrajectoryMetrics(row[0], *(float(x) for x in row[1:])))
            except ValueError:
                raise MetricsError(f"{path}: line {line}: non-numeric metric") from None
    if not rows:
        raise MetricsError(f"{path}: no trajectories")
    return rows


def write_ate_csv(path: str | Path, t: ArrayLike, series: ArrayLike):
    np.savetxt(path, np.column_stack([t, series]), fmt="%.17g", delimiter=",", header="t,ATE", comments="")


def write_track_csv(path: str | Path, t: ArrayLike, pred_ned: ArrayLike, gt_ned: ArrayLike):
    pred_ned, gt_ned = np.asarray(pred_ned), np.asarray(gt_ned)
    np.savetxt(
        path,
        np.column_stack([t, pred_ned[:, 0], pred_ned[:, 1], gt_ned[:, 0], gt_ned[:, 1]]),
        fmt="%.17g",
        delimiter=",",
        header="t,pred_n,pred_e,gt_n,gt_e",
        comments="",
    )


# --------------------------------------------------------------------------- comparison


def improvement(baseline: float, ours: float) -> float:
    """Percentage reduction of ``ours`` relative to ``baseline``."""
    if baseline == 0:
        return 0.0 if ours == 0 else -math.inf
    return (baseline - ours) / baseline * 100.0


@dataclass
class ComparisonReport:
    """Metric x method x trajectory table with averages and improvements.

    ``improvements[metric][label]`` is the improvement of ``reference`` over
    ``label``; it is empty with a single method.
    """

    labels: list
    ids: list
    reference: str
    values: dict
    averages: dict
    improvements: dict

    def render(self, decimals: int = 1) -> str:
        """Plain-text table; improvements shown as whole percent."""
        show_imp = len(self.labels) > 1
        head = ["Metric", "Method", *self.ids, "Average"] + (["Improvement [%]"] if show_imp else [])
        body = []
        for m in METRICS:
            for lab in self.labels:
                row = [f"{m} [{UNITS[m]}]", lab]
                row += [f"{self.values[m][lab][i]:.{decimals}f}" for i in self.ids]
                row.append(f"{self.averages[m][lab]:.{decimals}f}")
                if show_imp:
                    row.append("" if lab == self.reference else str(round_half_up(self.improvements[m][lab])))
                body.append(row)
        widths = [max(len(str(r[k])) for r in [head] + body) for k in range(len(head))]
        lines = ["  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip() for r in [head] + body]
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        show_imp = len(self.labels) > 1
        w.writerow(["metric", "method", *self.ids, "average"] + (["improvement"] if show_imp else []))
        for m in METRICS:
            for lab in self.labels:
                row = [m, lab] + [format_float(self.values[m][lab][i]) for i in self.ids]
                row.append(format_float(self.averages[m][lab]))
                if show_imp:
                    row.append("" if lab == self.reference else format_float(self.improvements[m][lab]))
                w.writerow(row)
        return buf.getvalue()


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def compare(reports: Mapping[str, Sequence[TrajectoryMetrics]], reference: str | None = None) -> ComparisonReport:
    """Combine per-method reports; averages are means over trajectories.

    ``reference`` (default: the last label) is the method whose improvement over
    each other method is reported.
    """
    labels = list(reports)
    if not labels:
        raise MetricsError("nothing to compare")
    reference = labels[-1] if reference is None else reference
    if reference not in reports:
        raise MetricsError(f"reference method {reference!r} not among {labels}")
    ids = [r.id for r in reports[labels[0]]]
    if len(set(ids)) != len(ids):
        raise MetricsError("duplicate trajectory ids")
    for lab in labels[1:]:
        other = [r.id for r in reports[lab]]
        if sorted(other) != sorted(ids):
            raise MetricsError(f"method {lab!r} covers trajectories {other}, expected {ids}")
    values = {m: {lab: {r.id: r.value(m) for r in reports[lab]} for lab in labels} for m in METRICS}
    averages = {m: {lab: float(np.mean([values[m][lab][i] for i in ids])) for lab in labels} for m in METRICS}
    imps = {
        m: {lab: improvement(averages[m][lab], averages[m][reference]) for lab in labels if lab != reference}
        for m in METRICS
    }
    return ComparisonReport(labels, ids, reference, values, averages, imps)


# --------------------------------------------------------------------------- plots


_COLORS = ("#000000", "#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd")


def track_svg(tracks: Mapping[str, ArrayLike], size: int = 480, margin: int = 40) -> str:
    """Self-contained SVG of north/east tracks (east to the right, north up)."""
    pts = {k: np.asarray(v, dtype=float)[:, :2] for k, v in tracks.items()}
    allp = np.concatenate(list(pts.values()))
    lo, hi = allp.min(0), allp.max(0)
    span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-9))
    s = (size - 2 * margin) / span

    def xy(p):
        return margin + (p[:, 1] - lo[1]) * s, size - margin - (p[:, 0] - lo[0]) * s

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for k, (name, p) in enumerate(pts.items()):
        x, y = xy(p)
        coords = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(x, y))
        color = _COLORS[k % len(_COLORS)]
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        out.append(f'<text x="{margin}" y="{20 + 14 * k}" font-size="12" fill="{color}">{name}</text>')
    out.append(
        f'<text x="{size - margin}" y="{size - 8}" font-size="10" text-anchor="end">'
        f"east [m], scale {span:.3g} m</text>"
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_track_svg(path: str | Path, tracks: Mapping[str, ArrayLike]):
    Path(path).write_text(track_svg(tracks))
