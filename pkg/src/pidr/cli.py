"""Command-line entry point: ``pidr {synth,dr,train,eval,compare}``.

Exit codes: 0 success, 2 configuration or validation error, 3 I/O error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__, dataset, frames, mechanization, metrics, network, synth, trainer
from .frames import DomainError

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERICAL = 0, 2, 3, 4
log = logging.getLogger("pidr")


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------- config files


def parse_value(text: str):
    """Interpret a config value: bool, int, float, comma-separated tuple or string."""
    s = text.strip()
    low = s.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if "," in s:
        return tuple(parse_value(p) for p in s.split(","))
    for conv in (int, float):
        try:
            return conv(s)
        except ValueError:
            pass
    if len(s) >= 2 and s[0] == s[-1] and s[0] in "\"'":
        return s[1:-1]
    return s


def read_config(path: str | Path | None) -> dict:
    """``key = value`` lines; ``#`` starts a comment; ``[section]`` lines are ignored."""
    if path is None:
        return {}
    out = {}
    for n, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}: line {n}: expected key = value")
        out[key.strip().replace("-", "_")] = parse_value(value)
    return out


def _write_manifest(out: Path, args, command: str, config: dict, inputs: list, seed=None):
    manifest = {
        "command": command,
        "config_file": getattr(args, "config", None),
        "config": {k: list(v) if isinstance(v, tuple) else v for k, v in config.items()},
        "inputs": [str(p) for p in inputs],
        "output_dir": str(out),
        "seed": seed,
        "version": __version__,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _write_timing(out: Path, seconds: float):
    (out / "timing.json").write_text(json.dumps({"wall_time_s": seconds}) + "\n")


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------- synth


def _profile(cfg: dict) -> synth.MotionProfile:
    known = {f.name for f in fields(synth.MotionProfile)} - {"origin"}
    kw = {}
    origin = None
    for k, v in cfg.items():
        if k in ("origin_lat_deg", "origin_lon_deg", "origin_h"):
            continue
        if k not in known:
            raise ConfigError(f"{k}: unknown profile option")
        kw[k] = v
    if any(k in cfg for k in ("origin_lat_deg", "origin_lon_deg", "origin_h")):
        d = synth.DEFAULT_ORIGIN
        origin = frames.GeodeticPosition(
            np.radians(cfg.get("origin_lat_deg", np.degrees(d.lat))),
            np.radians(cfg.get("origin_lon_deg", np.degrees(d.lon))),
            float(cfg.get("origin_h", d.height)),
        )
        kw["origin"] = origin
    for k, v in kw.items():
        if k not in ("kind", "origin") and not isinstance(v, (int, float)):
            raise ConfigError(f"{k}: expected a number, got {v!r}")
    return synth.MotionProfile(**kw)


def _errors(cfg: dict, seed: int | None) -> synth.SensorErrorModel | None:
    cfg = dict(cfg)
    model = cfg.pop("model", "none" if not cfg else "custom")
    if seed is not None:
        cfg["seed"] = seed
    if model == "none":
        return None
    if model == "xsens":
        extra = set(cfg) - {"seed", "with_bias", "accel_noise_unit"}
        if extra:
            raise ConfigError(f"{sorted(extra)[0]}: not an option of the xsens error model")
        return synth.SensorErrorModel.xsens_dot(
            int(cfg.get("seed", 0)), bool(cfg.get("with_bias", True)), cfg.get("accel_noise_unit", "ug")
        )
    if model != "custom":
        raise ConfigError(f"model: unknown error model {model!r}; expected none, xsens or custom")
    known = {f.name for f in fields(synth.SensorErrorModel)}
    for k in cfg:
        if k not in known:
            raise ConfigError(f"{k}: unknown error-model option")
    return synth.SensorErrorModel(**cfg)


def cmd_synth(args) -> int:
    t0 = time.perf_counter()
    pcfg = read_config(args.config)
    if args.kind is not None:
        pcfg["kind"] = args.kind
    if args.duration is not None:
        pcfg["duration"] = args.duration
    try:
        profile = _profile(pcfg)
    except DomainError as e:
        raise ConfigError(str(e)) from None
    ecfg = read_config(args.errors)
    errors = _errors(ecfg, args.seed)
    out = _outdir(args.out)
    synth.emit_dataset(profile, errors, out)
    _write_manifest(out, args, "synth", {**pcfg, **{f"errors.{k}": v for k, v in ecfg.items()}},
                    [p for p in (args.config, args.errors) if p], errors.seed if errors else None)
    _write_timing(out, time.perf_counter() - t0)
    print(f"wrote {out / 'imu.csv'}, {out / 'gt.csv'}, {out / 'meta.txt'}")
    return EXIT_OK


# --------------------------------------------------------------------------- dr


def _initial_state(gt: dataset.GroundTruth) -> mechanization.NavState:
    if gt.origin is None:
        raise ConfigError("dead reckoning needs the GT origin (meta.txt)")
    llh = frames.geodetic_from_ned(gt.position[:1], gt.origin)[0]
    return mechanization.NavState(
        frames.GeodeticPosition(*llh), gt.velocity[0], frames.dcm_from_euler(gt.euler[0])
    )


def write_trajectory_csv(path, t, ned, vel, euler):
    table = np.column_stack([t, ned, vel, euler])
    np.savetxt(path, table, fmt="%.17g", delimiter=",", header=",".join(dataset.GT_HEADER), comments="")


def _eval_outputs(out: Path, tid: str, t, ned, gt: dataset.GroundTruth) -> metrics.TrajectoryMetrics:
    pred = (t, ned)
    m = metrics.evaluate(pred, gt, tid)
    metrics.write_ate_csv(out / f"ate_{tid}.csv", m.t, m.ate)
    _, pp, pg = metrics.resample(pred, gt)
    metrics.write_track_csv(out / f"track_{tid}.csv", m.t, pp, pg)
    metrics.write_track_svg(out / f"track_{tid}.svg", {"GT": pg, "prediction": pp})
    return m


def cmd_dr(args) -> int:
    t0 = time.perf_counter()
    out = _outdir(args.out)
    rows = []
    for d in args.data:
        tr = dataset.load_trajectory(d)
        gt = tr.gt
        start = int(dataset.nearest_index(tr.imu.t, gt.t[:1])[0])
        imu = mechanization.ImuSeries(tr.imu.t[start:], tr.imu.f[start:], tr.imu.w[start:])
        sol = mechanization.dead_reckon(_initial_state(gt), imu, args.scheme, mode_2d=args.mode_2d)
        ned = frames.ned_from_geodetic(sol.position, gt.origin)
        euler = frames.euler_from_dcm(sol.attitude) if not args.mode_2d else _euler_2d(sol.attitude)
        write_trajectory_csv(out / f"trajectory_{tr.id}.csv", sol.t, ned, sol.velocity, euler)
        rows.append(_eval_outputs(out, tr.id, sol.t, ned, gt))
    metrics.write_metrics_csv(out / "metrics.csv", rows)
    _write_manifest(out, args, "dr", {"scheme": args.scheme, "mode_2d": args.mode_2d}, args.data)
    _write_timing(out, time.perf_counter() - t0)
    _print_rows(rows)
    return EXIT_OK


def _euler_2d(c):
    c = np.asarray(c)
    yaw = np.arctan2(c[..., 1, 0], c[..., 0, 0])
    return np.stack([np.zeros_like(yaw), np.zeros_like(yaw), yaw], -1)


def _print_rows(rows):
    for r in rows:
        print(f"{r.id}: PRMSE {r.PRMSE:.3f} m  MATE {r.MATE:.3f} m  TDE {r.TDE:.3f} %  FDE {r.FDE:.3f} m")


# --------------------------------------------------------------------------- train


_TRAIN_FIELDS = {f.name: f for f in fields(trainer.TrainConfig)}


def _train_config(args) -> tuple[trainer.TrainConfig, dict]:
    cfg = read_config(args.config)
    for k in cfg:
        if k not in _TRAIN_FIELDS:
            raise ConfigError(f"{k}: unknown training option")
    for name in _TRAIN_FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            cfg[name] = v
    try:
        return trainer.TrainConfig.from_dict(cfg), cfg
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e)) from None


def _load_set(paths, gt_rate=None) -> dataset.TrainingSet:
    trajs = []
    for d in paths:
        tr = dataset.load_trajectory(d)
        if gt_rate:
            tr = tr.with_gt(tr.gt.subsample(gt_rate))
        trajs.append(tr)
    return dataset.TrainingSet(trajs)


def cmd_train(args) -> int:
    t0 = time.perf_counter()
    config, raw = _train_config(args)
    ts = _load_set(args.data, args.gt_rate)
    out = _outdir(args.out)
    ckpt = out / "checkpoint.json"
    resume = trainer.load_checkpoint(args.resume) if args.resume else None
    if resume is None:
        ts = dataset.normalize_inputs(ts)
    (out / "config.json").write_text(config.to_json() + "\n")
    _write_manifest(out, args, "train", raw, args.data, config.seed)
    try:
        state = trainer.fit(config, ts, resume=resume, log_path=out / "train_log.csv", checkpoint_path=ckpt)
    except trainer.NumericalError as e:
        print(f"error: {e}; last good checkpoint kept at {ckpt}", file=sys.stderr)
        return EXIT_NUMERICAL
    (out / "report.json").write_text(json.dumps(state.report.to_dict(with_timing=False), sort_keys=True) + "\n")
    _write_timing(out, time.perf_counter() - t0)
    h = state.report.history
    print(
        f"{state.report.stop_reason} after {state.epoch} epochs; total loss {h[0].total:.4g} -> {h[-1].total:.4g}"
        if h else "no epochs run"
    )
    return EXIT_OK


# --------------------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    t0 = time.perf_counter()
    state = trainer.load_checkpoint(args.checkpoint)
    params = state.params.eval()
    out = _outdir(args.out)
    rows = []
    for d in args.data:
        tr = dataset.load_trajectory(d)
        u = state.normalizer.inputs(tr.imu.t, tr.imu.f, tr.imu.w, tr.t_start, tr.duration)
        y = network.forward(params, u)
        write_trajectory_csv(out / f"prediction_{tr.id}.csv", tr.imu.t, y[:, 0:3], y[:, 3:6], y[:, 6:9])
        rows.append(_eval_outputs(out, tr.id, tr.imu.t, y[:, 0:3], tr.gt))
    metrics.write_metrics_csv(out / "metrics.csv", rows)
    _write_manifest(out, args, "eval", {"checkpoint": str(args.checkpoint)}, args.data, state.config.seed)
    _write_timing(out, time.perf_counter() - t0)
    _print_rows(rows)
    return EXIT_OK


# --------------------------------------------------------------------------- compare


def cmd_compare(args) -> int:
    labels = args.labels or [Path(p).parent.name or Path(p).stem for p in args.reports]
    if len(labels) != len(args.reports):
        raise ConfigError("need one label per report")
    if len(set(labels)) != len(labels):
        raise ConfigError("labels must be unique")
    reports = {lab: metrics.read_metrics_csv(p) for lab, p in zip(labels, args.reports)}
    try:
        rep = metrics.compare(reports, args.reference)
    except metrics.MetricsError as e:
        raise ConfigError(str(e)) from None
    out = _outdir(args.out)
    text = rep.render()
    (out / "comparison.txt").write_text(text)
    (out / "comparison.csv").write_text(rep.to_csv())
    for tid in rep.ids:
        tracks, gt = {}, None
        for lab, p in zip(labels, args.reports):
            f = Path(p).parent / f"track_{tid}.csv"
            if f.exists():
                a = np.loadtxt(f, delimiter=",", skiprows=1, ndmin=2)
                tracks[lab] = a[:, 1:3]
                gt = a[:, 3:5] if gt is None else gt
        if tracks:
            metrics.write_track_svg(out / f"tracks_{tid}.svg", {"GT": gt, **tracks})
    _write_manifest(out, args, "compare", {"labels": labels, "reference": args.reference}, args.reports)
    print(text, end="")
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pidr", description="Physics-informed inertial dead reckoning.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic IMU/GT dataset")
    s.add_argument("--config", help="motion-profile config (key = value)")
    s.add_argument("--errors", help="sensor-error config (key = value)")
    s.add_argument("--kind", help="override the profile kind")
    s.add_argument("--duration", type=float)
    s.add_argument("--seed", type=int, help="override the sensor-noise seed")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    d = sub.add_parser("dr", help="dead-reckon IMU data from the first GT state")
    d.add_argument("data", nargs="+", help="dataset directories")
    d.add_argument("--scheme", choices=mechanization.SCHEMES, default="rk4")
    d.add_argument("--mode-2d", action="store_true")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_dr)

    t = sub.add_parser("train", help="train the network")
    t.add_argument("data", nargs="+", help="training dataset directories")
    t.add_argument("--config", help="training config (key = value)")
    t.add_argument("--out", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--gt-rate", type=float, help="thin GT supervision to this rate (Hz)")
    for name, f in _TRAIN_FIELDS.items():
        if isinstance(f.default, bool):
            t.add_argument(_flag(name), dest=name, action="store_const", const=True, default=None)
        else:
            t.add_argument(_flag(name), dest=name, type=type(f.default), default=None)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on datasets")
    e.add_argument("data", nargs="+")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare", help="combine metrics reports of several methods")
    c.add_argument("reports", nargs="+", help="metrics.csv files")
    c.add_argument("--labels", nargs="+")
    c.add_argument("--reference", help="method whose improvement is reported (default: last)")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (trainer.NumericalError, FloatingPointError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
