"""Training loop: mini-batched data fit plus collocation physics, AdamW, clipping,
reduce-on-plateau scheduling and convergence control.

Randomness is drawn from independent sub-streams ``default_rng([seed, stream, epoch])``
(shuffle, collocation, dropout), so a run resumed from a checkpoint continues
bit-identically.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from . import network as nw
from .dataset import Normalizer, TrainingSet
from .frames import WGS84, EarthModel
from .loss import LossBreakdown, LossWeights, combine, data_loss, physics_loss, sample_collocation, total_loss

STREAM_SHUFFLE = 1
STREAM_COLLOCATION = 2
STREAM_DROPOUT = 3
CHECKPOINT_VERSION = 1
LOG_HEADER = "epoch,total,data,phys,lr"


class NumericalError(RuntimeError):
    """Training produced a non-finite loss or gradient.

    ``params`` holds the last finite parameters and ``report`` the history so far.
    """

    def __init__(self, msg, params=None, report=None):
        super().__init__(msg)
        self.params = params
        self.report = report


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    batch_size: int = 512
    n_collocation: int = 2000
    scheduler_factor: float = 0.1
    scheduler_patience: int = 50
    scheduler_threshold: float = 1e-8
    min_learning_rate: float = 1e-7
    grad_clip_max: float = 1.0
    epsilon_converge: float = 1e-6
    max_epochs: int = 20000
    seed: int = 0
    hidden_layers: int = 4
    hidden_width: int = 128
    activation: str = "relu"
    dropout: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    w_p: float = 1.0
    w_v: float = 1.0
    w_eta: float = 1.0
    lambda_data: float = 1.0
    lambda_phys: float = 0.1
    mode_2d: bool = False
    checkpoint_every: int = 0

    def __post_init__(self):
        positive = (
            "learning_rate", "batch_size", "n_collocation", "scheduler_factor", "scheduler_patience",
            "grad_clip_max", "max_epochs", "hidden_layers", "hidden_width", "adam_eps",
        )
        for name in positive:
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"{name}: must be positive, got {v!r}")
        for name in ("weight_decay", "min_learning_rate", "scheduler_threshold", "checkpoint_every"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name}: must be non-negative")
        if not self.epsilon_converge >= 0:
            raise ValueError("epsilon_converge: must be non-negative")
        if not self.scheduler_factor < 1:
            raise ValueError("scheduler_factor: must be below 1")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout: must lie in [0, 1)")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("adam betas must lie in [0, 1)")
        if self.activation != "relu":
            raise ValueError("activation: only 'relu' is supported")
        self.weights  # validates the loss weights

    @property
    def hidden(self) -> tuple:
        return (self.hidden_width,) * self.hidden_layers

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.w_p, self.w_v, self.w_eta, self.lambda_data, self.lambda_phys)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ValueError(f"unknown training options {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            default = known[k].default
            if isinstance(default, bool):
                kw[k] = bool(v)
            elif isinstance(default, int):
                if float(v) != int(float(v)):
                    raise ValueError(f"{k}: expected an integer, got {v!r}")
                kw[k] = int(float(v))
            elif isinstance(default, float):
                kw[k] = float(v)
            else:
                kw[k] = v
        return cls(**kw)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


# --------------------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros_like(cls, arrays) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0)

    def to_dict(self) -> dict:
        return {"m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v], "step": self.step}

    @classmethod
    def from_dict(cls, d: dict, like) -> "AdamState":
        m = [np.array(a, dtype=float).reshape(x.shape) for a, x in zip(d["m"], like)]
        v = [np.array(a, dtype=float).reshape(x.shape) for a, x in zip(d["v"], like)]
        return cls(m, v, int(d["step"]))


def adamw_step(
    params: list,
    grads: list,
    state: AdamState,
    lr: float,
    weight_decay: float,
    betas: tuple = (0.9, 0.999),
    eps: float = 1e-8,
) -> tuple[list, AdamState]:
    """One AdamW update with bias correction and decoupled weight decay.

    ``p <- p - lr * wd * p - lr * m_hat / (sqrt(v_hat) + eps)``
    """
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ValueError("parameter and gradient shapes differ")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient in parameter array {i}")
    b1, b2 = betas
    step = state.step + 1
    c1, c2 = 1.0 - b1**step, 1.0 - b2**step
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        upd = (m / c1) / (np.sqrt(v / c2) + eps)
        new_p.append(p - lr * weight_decay * p - lr * upd)
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, step)


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads))


def clip_gradients(grads: list, max_norm: float = 1.0) -> tuple[list, float]:
    """Scale all gradients by ``max_norm / norm`` when the global l2 norm exceeds ``max_norm``.

    Returns the (possibly) scaled gradients and the norm before clipping.
    """
    norm = global_norm(grads)
    if norm > max_norm:
        s = max_norm / norm
        return [g * s for g in grads], norm
    return list(grads), norm


# --------------------------------------------------------------------------- scheduler


@dataclass
class PlateauScheduler:
    """Reduce the learning rate by ``factor`` after ``patience`` epochs without a
    relative improvement of at least ``threshold``; never below ``min_lr``."""

    lr: float
    factor: float = 0.1
    patience: int = 50
    threshold: float = 1e-8
    min_lr: float = 1e-7
    best: float = math.inf
    bad_epochs: int = 0

    def step(self, loss: float) -> float:
        if loss < self.best - self.threshold * abs(self.best) or self.best == math.inf:
            self.best = loss
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
            if self.bad_epochs >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.bad_epochs = 0
        return self.lr

    def to_dict(self) -> dict:
        d = asdict(self)
        d["best"] = None if math.isinf(self.best) else self.best
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PlateauScheduler":
        d = dict(d)
        d["best"] = math.inf if d["best"] is None else d["best"]
        return cls(**d)


def schedule_lr(
    history, current_lr: float, factor: float = 0.1, patience: int = 50, threshold: float = 1e-8, min_lr: float = 1e-7
) -> float:
    """Learning rate after replaying a loss ``history`` through the plateau rule."""
    if patience < 1:
        raise ValueError("patience must be at least 1")
    s = PlateauScheduler(current_lr, factor, patience, threshold, min_lr)
    for x in history:
        s.step(float(x))
    return s.lr


# --------------------------------------------------------------------------- training


@dataclass
class TrainReport:
    history: list = field(default_factory=list)
    lr_history: list = field(default_factory=list)
    max_update_norm: list = field(default_factory=list)
    wall_time: float = 0.0
    stop_reason: str = ""
    phys_evaluations: int = 0

    @property
    def epochs(self) -> int:
        return len(self.history)

    def to_dict(self, with_timing: bool = True) -> dict:
        d = {
            "history": [asdict(h) for h in self.history],
            "lr_history": list(self.lr_history),
            "max_update_norm": list(self.max_update_norm),
            "stop_reason": self.stop_reason,
            "phys_evaluations": self.phys_evaluations,
        }
        if with_timing:
            d["wall_time"] = self.wall_time
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainReport":
        return cls(
            [LossBreakdown(**h) for h in d["history"]],
            list(d["lr_history"]),
            list(d["max_update_norm"]),
            d.get("wall_time", 0.0),
            d["stop_reason"],
            d["phys_evaluations"],
        )


@dataclass
class _DataArrays:
    u: NDArray
    y: NDArray


def data_arrays(ts: TrainingSet) -> _DataArrays:
    """Pooled network inputs and targets of every aligned sample."""
    nz = ts.normalizer or Normalizer.identity()
    us, ys = [], []
    for tr in ts.trajectories:
        a = tr.aligned
        us.append(nz.inputs(a.t, a.f, a.w, tr.t_start, tr.duration))
        ys.append(a.targets)
    return _DataArrays(np.concatenate(us), np.concatenate(ys))


@dataclass
class TrainState:
    """Everything needed to continue a run exactly."""

    config: TrainConfig
    params: nw.NetworkParams
    normalizer: Normalizer
    adam: AdamState
    scheduler: PlateauScheduler
    report: TrainReport
    epoch: int = 0

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "config": self.config.to_dict(),
            "network": self.params.to_dict(),
            "normalizer": self.normalizer.to_dict(),
            "adam": self.adam.to_dict(),
            "scheduler": self.scheduler.to_dict(),
            "report": self.report.to_dict(with_timing=False),
            "epoch": self.epoch,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainState":
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
        config = TrainConfig.from_dict(d["config"])
        params = nw.NetworkParams.from_dict(d["network"], nw.layer_shapes(config.hidden))
        params.mode = "train"
        params.dropout_rate = config.dropout
        return cls(
            config,
            params,
            Normalizer.from_dict(d["normalizer"]),
            AdamState.from_dict(d["adam"], params.flat()),
            PlateauScheduler.from_dict(d["scheduler"]),
            TrainReport.from_dict(d["report"]),
            int(d["epoch"]),
        )


def save_checkpoint(path: str | Path, state: TrainState):
    Path(path).write_text(json.dumps(state.to_dict()))


def load_checkpoint(path: str | Path) -> TrainState:
    return TrainState.from_dict(json.loads(Path(path).read_text()))


def _fresh_state(config: TrainConfig, ts: TrainingSet) -> TrainState:
    nz = ts.normalizer or Normalizer.fit(ts.trajectories)
    params = nw.init_params(config.seed, config.hidden, config.dropout)
    params.out_mean, params.out_std = nz.out_mean.copy(), nz.out_std.copy()
    sched = PlateauScheduler(
        config.learning_rate,
        config.scheduler_factor,
        config.scheduler_patience,
        config.scheduler_threshold,
        config.min_learning_rate,
    )
    return TrainState(config, params, nz, AdamState.zeros_like(params.flat()), sched, TrainReport(), 0)


def train(config: TrainConfig, ts: TrainingSet, **kw) -> tuple[nw.NetworkParams, TrainReport]:
    """Fit the network to ``ts``; returns eval-mode parameters and the report.

    Keyword arguments are passed to :func:`fit`.
    """
    state = fit(config, ts, **kw)
    return state.params.eval(), state.report


def fit(
    config: TrainConfig,
    ts: TrainingSet,
    *,
    resume: TrainState | None = None,
    log_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
    model: EarthModel = WGS84,
    on_epoch: Callable[[TrainState], None] | None = None,
) -> TrainState:
    """Run the training loop and return the final :class:`TrainState`.

    With ``resume`` the run continues from a saved state; its config takes
    precedence over ``config`` except for ``max_epochs``. A non-finite loss or
    gradient raises :class:`NumericalError` after saving the last completed
    epoch to ``checkpoint_path``.
    """
    t0 = time.perf_counter()
    if resume is not None:
        state = resume
        state.config = TrainConfig.from_dict({**state.config.to_dict(), "max_epochs": config.max_epochs})
        ts = TrainingSet(list(ts.trajectories), state.normalizer)
    else:
        state = _fresh_state(config, ts)
        ts = TrainingSet(list(ts.trajectories), state.normalizer)
    cfg = state.config
    w = cfg.weights
    data = data_arrays(ts)
    n = len(data.u)
    n_batches = max(1, math.ceil(n / cfg.batch_size))
    use_phys = w.lambda_phys > 0
    use_data = w.lambda_data > 0

    log_fh = None
    if log_path is not None:
        log_fh = open(log_path, "a" if resume is not None else "w")
        if resume is None:
            log_fh.write(LOG_HEADER + "\n")
    try:
        while state.epoch < cfg.max_epochs:
            epoch = state.epoch
            params = state.params
            perm = np.random.default_rng([cfg.seed, STREAM_SHUFFLE, epoch]).permutation(n)
            batches = np.array_split(perm, n_batches)
            drop_rng = np.random.default_rng([cfg.seed, STREAM_DROPOUT, epoch])
            colloc = None
            if use_phys:
                colloc = sample_collocation(
                    ts, cfg.n_collocation, np.random.default_rng([cfg.seed, STREAM_COLLOCATION, epoch]), model
                )
                c_parts = np.array_split(np.arange(len(colloc)), n_batches)
            sums = np.zeros(6)
            max_norm = 0.0
            for b, idx in enumerate(batches):
                leaves = nw.params_tensors(params)
                d_loss = p_loss = None
                if use_data:
                    masks = nw.dropout_masks(params, len(idx), drop_rng) if cfg.dropout > 0 else None
                    y, _ = nw.forward_tape(leaves, params, data.u[idx], None, masks)
                    d_loss = data_loss(y, data.y[idx], w)
                if use_phys and len(c_parts[b]):
                    cb = colloc.subset(c_parts[b])
                    yc, ydc = nw.forward_tape(leaves, params, cb.u, cb.time_scale, None)
                    p_loss = physics_loss(yc, ydc, cb, model, cfg.mode_2d)
                    state.report.phys_evaluations += 1
                total = combine(d_loss, p_loss.total if p_loss is not None else None, w)
                br = total_loss(d_loss if d_loss is not None else 0.0, p_loss if p_loss is not None else 0.0, w)
                if not all(math.isfinite(x) for x in (br.total, br.data, br.phys)):
                    raise NumericalError(f"non-finite loss at epoch {epoch + 1}, batch {b + 1}", params.eval(), state.report)
                grads = nw.gradients(leaves, total)
                if not all(np.all(np.isfinite(g)) for g in grads):
                    raise NumericalError(f"non-finite gradient at epoch {epoch + 1}, batch {b + 1}", params.eval(), state.report)
                grads, _ = clip_gradients(grads, cfg.grad_clip_max)
                max_norm = max(max_norm, global_norm(grads))
                new_flat, state.adam = adamw_step(
                    params.flat(), grads, state.adam, state.scheduler.lr, cfg.weight_decay,
                    (cfg.adam_beta1, cfg.adam_beta2), cfg.adam_eps,
                )
                params = params.with_flat(new_flat)
                sums += np.array([br.data, br.phys, br.total, br.phys_p, br.phys_v, br.phys_eta])
            mean = sums / len(batches)
            rec = LossBreakdown(mean[0], mean[1], mean[2], mean[3], mean[4], mean[5])
            lr_used = state.scheduler.lr
            state.params = params
            state.epoch = epoch + 1
            state.report.history.append(rec)
            state.report.lr_history.append(lr_used)
            state.report.max_update_norm.append(max_norm)
            state.scheduler.step(rec.total)
            if log_fh is not None:
                log_fh.write(f"{epoch + 1},{rec.total:.17g},{rec.data:.17g},{rec.phys:.17g},{lr_used:.17g}\n")
            if checkpoint_path is not None and cfg.checkpoint_every and state.epoch % cfg.checkpoint_every == 0:
                save_checkpoint(checkpoint_path, state)
            if on_epoch is not None:
                on_epoch(state)
            if abs(rec.total) < cfg.epsilon_converge:
                state.report.stop_reason = "converged"
                break
        else:
            state.report.stop_reason = "max_epochs"
    except NumericalError:
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, state)
        raise
    finally:
        if log_fh is not None:
            log_fh.close()
    if checkpoint_path is not None:
        save_checkpoint(checkpoint_path, state)
    state.report.wall_time = time.perf_counter() - t0
    return state


def predict(params: nw.NetworkParams, normalizer: Normalizer, traj, t=None) -> NDArray:
    """Network outputs (n, 9) along ``traj``.

    By default at the aligned GT timestamps with the paired IMU samples, as in
    training; explicit times ``t`` use linearly interpolated IMU values.
    """
    if t is None:
        a = traj.aligned
        t, f, w = a.t, a.f, a.w
    else:
        t = np.asarray(t, dtype=float)
        f, w = traj.imu.interpolate(t)
    u = normalizer.inputs(t, f, w, traj.t_start, traj.duration)
    return nw.forward(params.eval(), u)
