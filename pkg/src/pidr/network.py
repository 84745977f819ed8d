"""Fully connected ReLU network with exact time derivatives.

Layout: ``7 -> 128 -> 128 -> 128 -> 128 -> 9`` with ReLU and inverted dropout after
each hidden layer. The input is ``u = (t, fx, fy, fz, wx, wy, wz)`` already scaled
by :class:`pidr.dataset.Normalizer`; the output passes through a fixed affine map
``out_mean + out_std * z`` so it comes out in physical units (NED meters, m/s,
radians).

Two evaluation paths share the parameters:

* :func:`forward` is plain numpy, for inference.
* :func:`forward_tape` records the computation on the :mod:`pidr.autodiff` tape,
  optionally together with the forward-mode tangent ``d output / d t``, so that
  reverse mode yields exact parameter gradients of losses that contain the time
  derivative.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import autodiff as ad
from .autodiff import Tensor

N_IN = 7
N_OUT = 9
HIDDEN = (128, 128, 128, 128)
DROPOUT = 0.1
FD_STEP = 1e-4
CHECKPOINT_VERSION = 1


class ContractError(RuntimeError):
    """Operation called in a state its contract forbids."""


@dataclass
class NetworkParams:
    """Weights ``W[l]`` of shape (out, in), biases ``b[l]`` of shape (out,)."""

    weights: list
    biases: list
    dropout_rate: float = DROPOUT
    mode: str = "train"
    seed: int | None = None
    out_mean: NDArray = field(default_factory=lambda: np.zeros(N_OUT))
    out_std: NDArray = field(default_factory=lambda: np.ones(N_OUT))

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float).reshape(-1) for b in self.biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {l}: weight {w.shape} and bias {b.shape} disagree")
            if l and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(f"layer {l}: input width {w.shape[1]} != {self.weights[l - 1].shape[0]}")
        if self.mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {self.mode!r}")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        self.out_mean = np.asarray(self.out_mean, dtype=float).reshape(-1)
        self.out_std = np.asarray(self.out_std, dtype=float).reshape(-1)
        if self.out_mean.shape != (self.n_out,) or self.out_std.shape != (self.n_out,):
            raise ValueError("output scaling must match the output width")
        if not all(np.all(np.isfinite(a)) for a in self.weights + self.biases):
            raise ValueError("parameters must be finite")

    @property
    def n_in(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_out(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def hidden(self) -> tuple:
        return tuple(w.shape[0] for w in self.weights[:-1])

    @property
    def shapes(self) -> list:
        return [list(w.shape) for w in self.weights]

    def flat(self) -> list:
        """Parameters in the order W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def with_flat(self, arrays) -> "NetworkParams":
        arrays = list(arrays)
        return NetworkParams(
            arrays[0::2], arrays[1::2], self.dropout_rate, self.mode, self.seed, self.out_mean, self.out_std
        )

    def copy(self) -> "NetworkParams":
        return self.with_flat([a.copy() for a in self.flat()])

    def eval(self) -> "NetworkParams":
        p = self.copy()
        p.mode = "eval"
        return p

    def train(self) -> "NetworkParams":
        p = self.copy()
        p.mode = "train"
        return p

    def n_params(self) -> int:
        return sum(a.size for a in self.flat())

    def to_dict(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "shapes": self.shapes,
            "seed": self.seed,
            "dropout_rate": self.dropout_rate,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "out_mean": self.out_mean.tolist(),
            "out_std": self.out_std.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict, expect_shapes: list | None = None) -> "NetworkParams":
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported network checkpoint version {d.get('version')!r}")
        ws = [np.array(w, dtype=float).reshape(s) for w, s in zip(d["weights"], d["shapes"])]
        p = cls(ws, d["biases"], d["dropout_rate"], "eval", d.get("seed"), d["out_mean"], d["out_std"])
        if p.shapes != d["shapes"] or (expect_shapes is not None and p.shapes != [list(s) for s in expect_shapes]):
            raise ValueError(f"checkpoint layer shapes {p.shapes} do not match {expect_shapes or d['shapes']}")
        return p


def layer_shapes(hidden=HIDDEN, n_in: int = N_IN, n_out: int = N_OUT) -> list:
    widths = [n_in, *hidden, n_out]
    return [[widths[i + 1], widths[i]] for i in range(len(widths) - 1)]


def init_params(
    seed: int,
    hidden=HIDDEN,
    dropout_rate: float = DROPOUT,
    n_in: int = N_IN,
    n_out: int = N_OUT,
) -> NetworkParams:
    """He-normal weights (variance 2 / fan_in) and zero biases."""
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for n_o, n_i in layer_shapes(hidden, n_in, n_out):
        ws.append(rng.standard_normal((n_o, n_i)) * math.sqrt(2.0 / n_i))
        bs.append(np.zeros(n_o))
    return NetworkParams(ws, bs, dropout_rate, "train", seed)


def _check_input(params: NetworkParams, u) -> NDArray:
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[None, :]
    if u.ndim != 2 or u.shape[1] != params.n_in:
        raise ValueError(f"input must have shape (n, {params.n_in}), got {u.shape}")
    if not np.all(np.isfinite(u)):
        raise ValueError("network input must be finite")
    return u


def dropout_masks(params: NetworkParams, n: int, rng: np.random.Generator) -> list:
    """Inverted-dropout masks (0 or 1/(1-p)) for each hidden layer of an n-row batch."""
    p = params.dropout_rate
    return [(rng.random((n, h)) >= p) / (1.0 - p) for h in params.hidden]


def _masks_for(params: NetworkParams, n: int, dropout_seed, masks):
    if params.mode == "eval" or params.dropout_rate == 0:
        return None
    if masks is not None:
        return masks
    rng = dropout_seed if isinstance(dropout_seed, np.random.Generator) else np.random.default_rng(dropout_seed)
    return dropout_masks(params, n, rng)


def forward(params: NetworkParams, u: ArrayLike, dropout_seed=None, masks=None) -> NDArray:
    """Network output, shape (n, 9), for normalized inputs ``u`` of shape (n, 7).

    In train mode dropout masks are drawn from ``dropout_seed`` (an int or a
    Generator) unless ``masks`` pins them; eval mode ignores both.
    """
    u = _check_input(params, u)
    masks = _masks_for(params, len(u), dropout_seed, masks)
    h = u
    for l, (w, b) in enumerate(zip(params.weights[:-1], params.biases[:-1])):
        h = np.maximum(h @ w.T + b, 0.0)
        if masks is not None:
            h = h * masks[l]
    z = h @ params.weights[-1].T + params.biases[-1]
    return params.out_mean + params.out_std * z


def forward_with_time_derivative(
    params: NetworkParams,
    u: ArrayLike,
    time_scale: float | ArrayLike = 1.0,
    masks=None,
    method: str = "exact",
) -> tuple[NDArray, NDArray]:
    """Output and its derivative w.r.t. physical time.

    ``time_scale`` is ``d u[:, 0] / dt`` (``1 / duration`` for the per-trajectory
    time normalization), scalar or per row. ``method="fd"`` replaces the exact
    forward-mode tangent by a central difference with a step of 1e-4 s.
    """
    u = _check_input(params, u)
    if params.mode == "train" and params.dropout_rate > 0 and masks is None:
        raise ContractError("time derivative in train mode needs pinned dropout masks")
    if method == "fd":
        ts = np.broadcast_to(np.asarray(time_scale, dtype=float), (len(u),))
        du = np.zeros_like(u)
        du[:, 0] = FD_STEP * ts
        y = forward(params, u, masks=masks)
        ydot = (forward(params, u + du, masks=masks) - forward(params, u - du, masks=masks)) / (2 * FD_STEP)
        return y, ydot
    if method != "exact":
        raise ValueError(f"unknown derivative method {method!r}")
    y, ydot = forward_tape(params_tensors(params, requires_grad=False), params, u, time_scale, masks)
    return y.value, ydot.value


def params_tensors(params: NetworkParams, requires_grad: bool = True) -> list:
    """Tape leaves in the order of :meth:`NetworkParams.flat`."""
    return [Tensor(a, requires_grad=requires_grad) for a in params.flat()]


def forward_tape(
    leaves: list,
    params: NetworkParams,
    u: ArrayLike,
    time_scale: float | ArrayLike | None = None,
    masks=None,
) -> tuple[Tensor, Tensor | None]:
    """Recorded forward pass; with ``time_scale`` also the exact time tangent.

    ``masks`` are fixed dropout masks (None disables dropout). ReLU uses the
    convention ``d relu(z) / dz = 1`` for ``z > 0`` and 0 otherwise.
    """
    u = _check_input(params, u)
    ws, bs = leaves[0::2], leaves[1::2]
    h: Tensor = Tensor(u)
    dh: Tensor | None = None
    if time_scale is not None:
        ts = np.asarray(time_scale, dtype=float)
        ts = ts.reshape(-1, 1) if ts.ndim else ts
        # tangent of the first pre-activation: column 0 of W0 times du0/dt
        dh = ad.mul(ad.reshape(ws[0][:, 0], (1, -1)), np.broadcast_to(ts, (len(u), 1)))
    for l in range(len(ws) - 1):
        z = ad.linear(h, ws[l], bs[l])
        gate = (z.value > 0).astype(float)
        if masks is not None:
            gate = gate * masks[l]
        h = ad.mul(z, gate)
        if dh is not None:
            dz = dh if l == 0 else ad.linear(dh, ws[l])
            dh = ad.mul(dz, gate)
    z = ad.linear(h, ws[-1], bs[-1])
    y = ad.add(params.out_mean, ad.mul(z, params.out_std))
    ydot = None
    if dh is not None:
        ydot = ad.mul(ad.linear(dh, ws[-1]), params.out_std)
    return y, ydot


def gradients(leaves: list, loss: Tensor, seed: ArrayLike | None = None) -> list:
    """Reverse-mode gradient of ``loss`` w.r.t. every leaf (zeros where unused)."""
    for p in leaves:
        p.zero_grad()
    if seed is not None and np.shape(seed) != loss.shape:
        raise ValueError(f"adjoint shape {np.shape(seed)} does not match loss shape {loss.shape}")
    ad.backward(loss, seed)
    return [p.grad if p.grad is not None else np.zeros_like(p.value) for p in leaves]


def save_params(path: str | Path, params: NetworkParams, extra: dict | None = None):
    d = params.to_dict()
    if extra:
        d.update(extra)
    Path(path).write_text(json.dumps(d))


def load_params(path: str | Path, expect_shapes: list | None = None) -> tuple[NetworkParams, dict]:
    d = json.loads(Path(path).read_text())
    return NetworkParams.from_dict(d, expect_shapes), d
