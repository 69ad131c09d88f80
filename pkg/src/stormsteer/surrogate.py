"""Differentiable surrogate of the detector: a small all-convolutional scorer
with hand-written forward and backward passes, trained with a focal loss on
dilated labels.

Activations are kept channels-last, (N, r, c, C), internally; the public
surface takes inputs as (N, 4, r, c) and returns probabilities (N, r, c).
Convolutions are 3x3, stride 1, periodic in longitude and zero-padded in
latitude.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .fields import INPUT_CHANNELS, DetectorInputs, StandardizationStats

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7
CHECKPOINT_MAGIC = "SURR1"
_CHUNK_ROWS = 1 << 16  # im2col rows per matmul block


class TrainingDiverged(RuntimeError):
    pass


def _pad(x: np.ndarray, d: int = 1) -> np.ndarray:
    xp = np.concatenate([x[:, :, -d:], x, x[:, :, :d]], axis=2)
    return np.pad(xp, ((0, 0), (d, d), (0, 0), (0, 0)))


def _windows(xp: np.ndarray, d: int = 1) -> np.ndarray:
    # (N, H, W, 3, 3, C) view of the dilated 3x3 neighbourhoods
    k = 2 * d + 1
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[..., ::d, ::d]
    return win.transpose(0, 1, 2, 4, 5, 3)


def _chunk(shape) -> int:
    N, H, W = shape[:3]
    return max(1, _CHUNK_ROWS // (H * W))


def conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, d: int = 1) -> np.ndarray:
    """3x3 convolution with dilation ``d``; x is (N, H, W, C), w is (3, 3, C, O)."""
    N, H, W, C = x.shape
    O = w.shape[-1]
    win = _windows(_pad(x, d), d)
    wf = w.reshape(9 * C, O)
    out = np.empty((N, H, W, O), dtype=x.dtype)
    step = _chunk(x.shape)
    for s in range(0, N, step):
        cols = np.ascontiguousarray(win[s:s + step]).reshape(-1, 9 * C)
        out[s:s + step] = (cols @ wf).reshape(-1, H, W, O)
    out += b
    return out


def conv_backward_input(dout: np.ndarray, w: np.ndarray, d: int = 1) -> np.ndarray:
    N, H, W, O = dout.shape
    C = w.shape[2]
    wt = w.reshape(9 * C, O).T
    dxp = np.zeros((N, H + 2 * d, W + 2 * d, C), dtype=dout.dtype)
    step = _chunk(dout.shape)
    for s in range(0, N, step):
        dcols = (dout[s:s + step].reshape(-1, O) @ wt).reshape(-1, H, W, 3, 3, C)
        blk = dxp[s:s + step]
        for a in range(3):
            for c in range(3):
                blk[:, a * d:a * d + H, c * d:c * d + W] += dcols[:, :, :, a, c]
    dx = dxp[:, d:H + d, d:W + d].copy()
    # fold the periodic longitude halo back
    dx[:, :, W - d:] += dxp[:, d:H + d, :d]
    dx[:, :, :d] += dxp[:, d:H + d, W + d:]
    return dx


def conv_backward_params(x: np.ndarray, dout: np.ndarray, d: int = 1) -> tuple[np.ndarray, np.ndarray]:
    N, H, W, C = x.shape
    O = dout.shape[-1]
    win = _windows(_pad(x, d), d)
    dw = np.zeros((9 * C, O))
    step = _chunk(x.shape)
    for s in range(0, N, step):
        cols = np.ascontiguousarray(win[s:s + step]).reshape(-1, 9 * C)
        dw += cols.T @ dout[s:s + step].reshape(-1, O)
    return dw.reshape(3, 3, C, O), dout.sum(axis=(0, 1, 2))


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class SurrogateModel:
    weights: list  # (3, 3, C_in, C_out) per layer
    biases: list
    activation: str = "tanh"
    dilations: tuple = ()  # per layer; empty means all 1
    input_stats: StandardizationStats | None = None
    field_stats: StandardizationStats | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per layer")
        dil = tuple(int(d) for d in self.dilations) or (1,) * len(self.weights)
        if len(dil) != len(self.weights) or min(dil) < 1:
            raise ValueError("need one positive dilation per layer")
        self.dilations = dil
        if self.weights[0].shape[2] != len(INPUT_CHANNELS) or self.weights[-1].shape[3] != 1:
            raise ValueError("surrogate maps 4 input channels to 1 output channel")

    @classmethod
    def init(cls, hidden: int = 16, layers: int = 3, seed: int = 0, final_bias: float = -4.0,
             zero_final: bool = False, dilations=()) -> "SurrogateModel":
        rng = np.random.default_rng(seed)
        chans = [len(INPUT_CHANNELS)] + [hidden] * (layers - 1) + [1]
        weights, biases = [], []
        for cin, cout in zip(chans[:-1], chans[1:]):
            weights.append(rng.normal(0.0, np.sqrt(1.0 / (9 * cin)), size=(3, 3, cin, cout)))
            biases.append(np.zeros(cout))
        if zero_final:
            weights[-1][:] = 0.0
            biases[-1][:] = 0.0
        else:
            weights[-1] *= 0.1
            biases[-1][:] = final_bias
        return cls(weights, biases, dilations=tuple(dilations))

    @property
    def channels(self) -> list[int]:
        return [self.weights[0].shape[2]] + [w.shape[3] for w in self.weights]

    def params(self) -> list[np.ndarray]:
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    def set_params(self, params) -> None:
        self.weights = [np.array(p) for p in params[0::2]]
        self.biases = [np.array(p) for p in params[1::2]]

    def copy(self) -> "SurrogateModel":
        return SurrogateModel(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation,
            self.dilations, self.input_stats, self.field_stats, dict(self.meta),
        )

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 4 or x.shape[1] != self.channels[0]:
            raise ValueError(f"expected input of shape (N, {self.channels[0]}, r, c), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("surrogate input must be finite")
        return x

    def forward_cached(self, x):
        h = self._check(x).transpose(0, 2, 3, 1)
        acts = [h]
        n = len(self.weights)
        for k, (w, b, d) in enumerate(zip(self.weights, self.biases, self.dilations)):
            z = conv_forward(h, w, b, d)
            h = np.tanh(z) if k < n - 1 else sigmoid(z)
            acts.append(h)
        return acts[-1][..., 0], acts

    def forward(self, x) -> np.ndarray:
        """Probability map (N, r, c) for standardized inputs (N, 4, r, c)."""
        return self.forward_cached(x)[0]

    def backward(self, acts, dP, need_input: bool = True, need_params: bool = False):
        """Back-propagate dL/dP. Returns (dL/dx as (N, 4, r, c) or None, param grads or None)."""
        P = acts[-1]
        dz = dP[..., None] * P * (1.0 - P)
        grads = []
        n = len(self.weights)
        dx = None
        for k in range(n - 1, -1, -1):
            if need_params:
                grads.append(conv_backward_params(acts[k], dz, self.dilations[k]))
            if k == 0 and not need_input:
                break
            dh = conv_backward_input(dz, self.weights[k], self.dilations[k])
            if k > 0:
                dz = dh * (1.0 - acts[k] ** 2)
            else:
                dx = dh.transpose(0, 3, 1, 2)
        pgrads = None
        if need_params:
            grads.reverse()
            pgrads = [g for wb in grads for g in wb]
        return dx, pgrads


def _focal_terms(P, Z, gamma):
    Pc = np.clip(P, PROB_CLAMP, 1.0 - PROB_CLAMP)
    lp, l1p = np.log(Pc), np.log1p(-Pc)
    pos = (1.0 - Pc) ** gamma * Z * lp
    neg = Pc ** gamma * (1.0 - Z) * l1p
    return Pc, lp, l1p, -(pos + neg)


def focal_loss(P, Z, gamma=2.0, beta: int | None = None) -> float:
    """Focal loss summed over cells and averaged over ``beta`` time steps
    (default: the leading dimension). ``gamma`` may be a per-cell array."""
    P = np.asarray(P, dtype=float)
    Z = np.asarray(Z, dtype=float)
    if P.shape != Z.shape:
        raise ValueError(f"shape mismatch {P.shape} vs {Z.shape}")
    beta = P.shape[0] if beta is None else beta
    return float(_focal_terms(P, Z, gamma)[3].sum() / beta)


def focal_loss_grad(P, Z, gamma=2.0, beta: int | None = None) -> np.ndarray:
    """dL/dP of :func:`focal_loss`; zero where the clamp is active."""
    P = np.asarray(P, dtype=float)
    beta = P.shape[0] if beta is None else beta
    Pc, lp, l1p, _ = _focal_terms(P, Z, gamma)
    gamma = np.asarray(gamma, dtype=float)
    q = 1.0 - Pc
    d_pos = -gamma * q ** (gamma - 1.0) * Z * lp + q ** gamma * Z / Pc
    d_neg = gamma * Pc ** (gamma - 1.0) * (1.0 - Z) * l1p - Pc ** gamma * (1.0 - Z) / q
    g = -(d_pos + d_neg) / beta
    return np.where((P > PROB_CLAMP) & (P < 1.0 - PROB_CLAMP), g, 0.0)


def loss_and_grad_input(m: SurrogateModel, x, target, gamma_map=2.0, beta: int | None = None):
    P, acts = m.forward_cached(x)
    if P.shape != np.shape(target):
        raise ValueError(f"target shape {np.shape(target)} does not match output {P.shape}")
    loss = focal_loss(P, target, gamma_map, beta)
    dx, _ = m.backward(acts, focal_loss_grad(P, target, gamma_map, beta))
    return loss, dx


def grad_input(m: SurrogateModel, x, target, gamma_map=2.0, beta: int | None = None) -> np.ndarray:
    """Exact gradient of the (gamma-modulated) focal loss w.r.t. the input."""
    return loss_and_grad_input(m, x, target, gamma_map, beta)[1]


def model_inputs(inp: DetectorInputs, stats: StandardizationStats) -> np.ndarray:
    """Standardized (T, 4, r, c) surrogate input."""
    mu, sd = stats.vectors(INPUT_CHANNELS)
    return (inp.stack() - mu[None, :, None, None]) / sd[None, :, None, None]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 5.92e-4
    adam_beta1: float = 0.9101
    adam_beta2: float = 0.9119
    weight_decay: float = 6.48e-6
    epochs: int = 77
    batch_size: int = 8
    seed: int = 0
    hidden: int = 16
    gamma: float = 2.0
    val_fraction: float = 0.2
    final_bias: float = -4.0
    dilations: tuple = (1, 2, 4)

    def __post_init__(self):
        if not (self.lr > 0 and self.weight_decay >= 0):
            raise ValueError("learning rate must be positive and weight decay non-negative")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


class Adam:
    def __init__(self, params, lr, beta1, beta2, eps=1e-8, weight_decay=0.0):
        self.lr, self.b1, self.b2, self.eps, self.wd = lr, beta1, beta2, eps, weight_decay
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.k = 0

    def step(self, params, grads):
        self.k += 1
        c1 = 1.0 - self.b1 ** self.k
        c2 = 1.0 - self.b2 ** self.k
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if self.wd:
                g = g + self.wd * p
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _dataset_loss(m, x, y, gamma, batch):
    total = 0.0
    for s in range(0, len(x), batch):
        total += focal_loss(m.forward(x[s:s + batch]), y[s:s + batch], gamma, beta=1)
    return total / max(len(x), 1)


def train(x, labels, cfg: TrainConfig = TrainConfig(), val=None, model: SurrogateModel | None = None,
          input_stats: StandardizationStats | None = None,
          field_stats: StandardizationStats | None = None) -> SurrogateModel:
    """Fit the surrogate with Adam on per-snapshot pairs.

    Args:
        x: standardized inputs, (N, 4, r, c).
        labels: soft labels, (N, r, c).
        cfg: optimizer and architecture settings.
        val: optional (x_val, labels_val); by default a seeded
            ``cfg.val_fraction`` split of the data is held out.
        model: optional starting point (copied, not mutated).

    Returns:
        The model with the lowest validation loss seen (epoch 0 included),
        with per-epoch history in ``meta["history"]``.
    """
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if len(x) == 0:
        raise ValueError("empty training set")
    if x.shape[0] != labels.shape[0] or x.shape[2:] != labels.shape[1:]:
        raise ValueError("inputs and labels disagree in shape")
    rng = np.random.default_rng(cfg.seed)
    if val is None and cfg.val_fraction > 0 and len(x) >= 5:
        order = rng.permutation(len(x))
        n_val = max(1, int(round(cfg.val_fraction * len(x))))
        vi, ti = np.sort(order[:n_val]), np.sort(order[n_val:])
        val = (x[vi], labels[vi])
        x, labels = x[ti], labels[ti]
    if val is None:
        val = (x, labels)

    m = model.copy() if model is not None else SurrogateModel.init(cfg.hidden, seed=cfg.seed, final_bias=cfg.final_bias,
                                                                       dilations=cfg.dilations)
    m.input_stats = input_stats or m.input_stats
    m.field_stats = field_stats or m.field_stats
    params = m.params()
    opt = Adam(params, cfg.lr, cfg.adam_beta1, cfg.adam_beta2, weight_decay=cfg.weight_decay)

    best = _dataset_loss(m, *val, cfg.gamma, cfg.batch_size)
    best_params = [p.copy() for p in params]
    history = [{"epoch": 0, "train_loss": _dataset_loss(m, x, labels, cfg.gamma, cfg.batch_size), "val_loss": best}]
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(x))
        total = 0.0
        for s in range(0, len(x), cfg.batch_size):
            idx = np.sort(order[s:s + cfg.batch_size])
            P, acts = m.forward_cached(x[idx])
            loss = focal_loss(P, labels[idx], cfg.gamma)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch starting {s}")
            _, grads = m.backward(acts, focal_loss_grad(P, labels[idx], cfg.gamma), need_input=False, need_params=True)
            opt.step(params, grads)
            total += loss * len(idx)
        val_loss = _dataset_loss(m, *val, cfg.gamma, cfg.batch_size)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        history.append({"epoch": epoch, "train_loss": total / len(x), "val_loss": val_loss})
        log.debug("epoch %d train %.5f val %.5f", epoch, total / len(x), val_loss)
        if val_loss < best:
            best = val_loss
            best_params = [p.copy() for p in params]
    m.set_params(best_params)
    m.meta = {"history": history, "train_config": asdict(cfg), "best_val_loss": best}
    return m


def save_model(m: SurrogateModel, path) -> None:
    """Header line (architecture JSON) followed by float64 little-endian parameters."""
    params = m.params()
    header = {
        "magic": CHECKPOINT_MAGIC,
        "activation": m.activation,
        "channels": m.channels,
        "kernel": 3,
        "dilations": list(m.dilations),
        "params": [{"shape": list(p.shape)} for p in params],
        "dtype": "f64le",
        "input_stats": m.input_stats.to_dict() if m.input_stats else None,
        "field_stats": m.field_stats.to_dict() if m.field_stats else None,
        "meta": m.meta,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        for p in params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_model(path) -> SurrogateModel:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    try:
        header = json.loads(raw[:nl].decode("utf-8")) if nl >= 0 else None
    except (UnicodeDecodeError, json.JSONDecodeError):
        header = None
    if not isinstance(header, dict) or header.get("magic") != CHECKPOINT_MAGIC:
        raise ValueError("not a surrogate checkpoint")
    payload = raw[nl + 1:]
    shapes = [tuple(p["shape"]) for p in header["params"]]
    need = sum(int(np.prod(s)) for s in shapes) * 8
    if len(payload) != need:
        raise ValueError(f"checkpoint payload size mismatch: expected {need} bytes, found {len(payload)}")
    params, off = [], 0
    for s in shapes:
        n = int(np.prod(s))
        params.append(np.frombuffer(payload, dtype="<f8", count=n, offset=off).reshape(s).astype(np.float64))
        off += n * 8
    stats = {k: StandardizationStats.from_dict(header[k]) if header.get(k) else None for k in ("input_stats", "field_stats")}
    return SurrogateModel(params[0::2], params[1::2], header["activation"], tuple(header.get("dilations", ())),
                          stats["input_stats"],
                          stats["field_stats"], header.get("meta") or {})
