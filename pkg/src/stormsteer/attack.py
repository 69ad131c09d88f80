"""Gradient attacks on upstream fields through the surrogate detector.

All attacks operate on the standardized upstream variables. The chain from
those to the surrogate is: destandardize, derive detector inputs (wind speed,
thickness, elevation), standardize the inputs, run the surrogate. Only the
dynamical variables are perturbed; surface geopotential stays frozen.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .fields import GRAVITY, INPUT_CHANNELS, UPSTREAM_VARIABLES, FieldSequence, StandardizationStats
from .geo import GridGeometry, central_angle
from .labels import DilationParams, dilate
from .surrogate import SurrogateModel, focal_loss, focal_loss_grad

METHODS = ("cyc", "cyc-no-dilation", "cyc-no-weighting", "ala", "taaowpf", "aowf")
BASELINES = ("ala", "taaowpf", "aowf")
PERTURBED_VARIABLES = ("msl", "u10", "v10", "z300", "z500")


class AttackError(RuntimeError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class AttackConfig:
    eta: float = 0.01
    delta: float = 10.0
    iters: int = 1000
    lambda_reg: float = 0.1
    sigma_grad: float = math.radians(5.0)
    sigma_reg: float = math.radians(5.0)
    dilation: DilationParams = DilationParams(sigma=1.0, radius=1)
    method: str = "cyc"
    seed: int = 0
    # None means "as implied by method"; set explicitly to combine ablations
    use_dilation: bool | None = None
    use_weighting: bool | None = None
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.eta < 0 or self.delta < 0 or self.iters < 0 or self.lambda_reg < 0:
            raise ValueError("eta, delta, iters and lambda_reg must be non-negative")
        if not (self.sigma_grad > 0 and self.sigma_reg > 0):
            raise ValueError("sigma_grad and sigma_reg must be positive")
        if isinstance(self.dilation, dict):
            object.__setattr__(self, "dilation", DilationParams(**self.dilation))

    @property
    def dilated(self) -> bool:
        if self.use_dilation is not None:
            return self.use_dilation
        return self.method in ("cyc", "cyc-no-weighting")

    @property
    def weighted(self) -> bool:
        if self.use_weighting is not None:
            return self.use_weighting
        return self.method in ("cyc", "cyc-no-dilation")

    @property
    def update_rule(self) -> str:
        return {"ala": "adam", "aowf": "cosine"}.get(self.method, "sign")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["dilation"] = dataclasses.asdict(self.dilation)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown attack config keys: {sorted(extra)}")
        return cls(**d)


def threshold(P, level: float = 0.5) -> np.ndarray:
    return (np.asarray(P) >= level).astype(float)


def calibration_mask(z_target, z_orig, P0) -> np.ndarray:
    """1 where the target changes the detection and the initial surrogate
    prediction already agrees with the target."""
    z_target, z_orig, P0 = (np.asarray(a, dtype=float) for a in (z_target, z_orig, P0))
    if not (z_target.shape == z_orig.shape == P0.shape):
        raise ValueError("calibration_mask inputs must share a shape")
    return ((z_target != z_orig) & (threshold(P0) == z_target)).astype(float)


def gamma_map(M) -> np.ndarray:
    """Focal exponent per cell: 0 where calibrated, 2 elsewhere."""
    return np.where(np.asarray(M) > 0, 0.0, 2.0)


def distance_weights(z_target, geometry: GridGeometry, sigma_grad: float, sigma_reg: float):
    """(w_grad, w_reg) from the great-circle distance (radians) of every cell to
    the nearest target cell at the same time step; d = 0 when a step has no
    target cells."""
    z_target = np.asarray(z_target)
    lat, lon = geometry.mesh()
    d = np.zeros(z_target.shape)
    for t in range(z_target.shape[0]):
        ii, jj = np.nonzero(z_target[t] > 0)
        if len(ii) == 0:
            continue
        ang = central_angle(lat[..., None], lon[..., None], lat[ii, jj], lon[ii, jj])
        d[t] = ang.min(axis=-1)
    on = z_target > 0
    w_grad = np.where(on, 1.0, np.exp(-(d ** 2) / (2.0 * sigma_grad ** 2)))
    w_reg = np.where(on, 0.0, 1.0 - np.exp(-(d ** 2) / (2.0 * sigma_reg ** 2)))
    return w_grad, w_reg


def regularizer(y, y_adv, w_reg, lam: float, beta: int) -> float:
    """lam * ||w_reg * (y - y_adv)||^2 / beta; y arrays are (T, V, r, c)."""
    diff = (np.asarray(y) - np.asarray(y_adv)) * np.asarray(w_reg)[:, None]
    return float(lam * np.sum(diff * diff) / beta)


def adv_loss(P_adv, target_label, M, w_reg, y, y_adv, lam: float, beta: int | None = None) -> float:
    """Focal term with the calibration-mask exponent plus the weighted
    closeness regularizer, both averaged over ``beta`` steps."""
    P_adv = np.asarray(P_adv, dtype=float)
    beta = P_adv.shape[0] if beta is None else beta
    return focal_loss(P_adv, target_label, gamma_map(M), beta) + regularizer(y, y_adv, w_reg, lam, beta)


class InputChain:
    """Standardized upstream fields -> standardized surrogate inputs, with the
    matching vector-Jacobian product."""

    def __init__(self, field_stats: StandardizationStats, input_stats: StandardizationStats, gravity: float = GRAVITY):
        mu, sd = field_stats.vectors(UPSTREAM_VARIABLES)
        self.f_mu, self.f_sd = mu[None, :, None, None], sd[None, :, None, None]
        self.i_mu, self.i_sd = input_stats.vectors(INPUT_CHANNELS)
        self.gravity = gravity

    def forward(self, ystd: np.ndarray):
        phys = ystd * self.f_sd + self.f_mu
        msl, u, v, z300, z500, sg = (phys[:, k] for k in range(6))
        wind = np.sqrt(u * u + v * v)
        raw = np.stack([msl, wind, z300 - z500, sg / self.gravity], axis=1)
        x = (raw - self.i_mu[None, :, None, None]) / self.i_sd[None, :, None, None]
        return x, (u, v, wind)

    def backward(self, dx: np.ndarray, cache) -> np.ndarray:
        u, v, wind = cache
        draw = dx / self.i_sd[None, :, None, None]
        safe = np.where(wind > 0, wind, 1.0)
        dphys = np.zeros(dx.shape[:1] + (6,) + dx.shape[2:])
        dphys[:, 0] = draw[:, 0]
        dphys[:, 1] = np.where(wind > 0, draw[:, 1] * u / safe, 0.0)
        dphys[:, 2] = np.where(wind > 0, draw[:, 1] * v / safe, 0.0)
        dphys[:, 3] = draw[:, 2]
        dphys[:, 4] = -draw[:, 2]
        dphys[:, 5] = draw[:, 3] / self.gravity
        return dphys * self.f_sd


@dataclass
class AttackProblem:
    """Everything fixed during one attack: clean standardized fields, target
    label, calibration mask and distance weights."""

    chain: InputChain
    y0: np.ndarray  # (T, 6, r, c) standardized upstream
    target_label: np.ndarray
    M: np.ndarray
    w_grad: np.ndarray
    w_reg: np.ndarray
    free: np.ndarray  # (6,) bool, which variables may move

    def loss_and_grad(self, model: SurrogateModel, y: np.ndarray, lam: float):
        x, cache = self.chain.forward(y)
        P, acts = model.forward_cached(x)
        beta = P.shape[0]
        gam = gamma_map(self.M)
        loss = focal_loss(P, self.target_label, gam, beta) + regularizer(self.y0, y, self.w_reg, lam, beta)
        dx, _ = model.backward(acts, focal_loss_grad(P, self.target_label, gam, beta))
        g = self.chain.backward(dx, cache)
        g += 2.0 * lam * (self.w_reg ** 2)[:, None] * (y - self.y0) / beta
        g[:, ~self.free] = 0.0
        return loss, g, P


def _standardized_upstream(fields: FieldSequence, stats: StandardizationStats) -> np.ndarray:
    idx = [fields.index(n) for n in UPSTREAM_VARIABLES]
    mu, sd = stats.vectors(UPSTREAM_VARIABLES)
    return (fields.data[:, idx] - mu[None, :, None, None]) / sd[None, :, None, None]


def prepare(fields: FieldSequence, z_orig, z_target, model: SurrogateModel, cfg: AttackConfig,
            gravity: float = GRAVITY) -> AttackProblem:
    if model.field_stats is None or model.input_stats is None:
        raise ValueError("surrogate checkpoint lacks standardization statistics")
    z_orig = np.asarray(z_orig, dtype=float)
    z_target = np.asarray(z_target, dtype=float)
    shape = (fields.T,) + fields.geometry.shape
    if z_orig.shape != shape or z_target.shape != shape:
        raise ValueError(f"masks must have shape {shape}")
    chain = InputChain(model.field_stats, model.input_stats, gravity)
    y0 = _standardized_upstream(fields, model.field_stats)
    P0 = model.forward(chain.forward(y0)[0])
    M = calibration_mask(z_target, z_orig, P0)
    label = dilate(z_target, cfg.dilation, wrap_lon=fields.geometry.is_global) if cfg.dilated else z_target
    if cfg.weighted:
        w_grad, w_reg = distance_weights(z_target, fields.geometry, cfg.sigma_grad, cfg.sigma_reg)
    else:
        w_grad, w_reg = np.ones(shape), np.zeros(shape)
    free = np.array([n in PERTURBED_VARIABLES for n in UPSTREAM_VARIABLES])
    return AttackProblem(chain, y0, label, M, w_grad, w_reg, free)


def cosine_step_size(eta: float, k: int, K: int) -> float:
    """eta * (1 + cos(pi k / K)) / 2; eta at k = 0, 0 at k = K."""
    if K <= 0:
        return eta
    return eta * 0.5 * (1.0 + math.cos(math.pi * k / K))


def optimize(problem: AttackProblem, model: SurrogateModel, cfg: AttackConfig, callback=None):
    """Run the projected iterations on the perturbation p = y_adv - y0, which
    keeps |p| <= delta exact in floating point.

    Returns (p, trace) with trace rows (iteration, loss at that iterate,
    max |p|). ``callback(k, p)`` is called after each update.
    """
    y0 = problem.y0
    p = np.zeros_like(y0)
    wg = problem.w_grad[:, None]
    K = cfg.iters
    trace = []
    if cfg.update_rule == "adam":
        m = np.zeros_like(p)
        v = np.zeros_like(p)
    for k in range(K + 1):
        loss, g, _ = problem.loss_and_grad(model, y0 + p, cfg.lambda_reg)
        linf = float(np.max(np.abs(p))) if p.size else 0.0
        trace.append((k, loss, linf))
        if not np.isfinite(loss):
            raise AttackError(f"non-finite attack loss at iteration {k}", np.array(trace))
        if k == K:
            break
        if cfg.update_rule == "adam":
            m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g
            v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * g * g
            mh = m / (1.0 - cfg.adam_beta1 ** (k + 1))
            vh = v / (1.0 - cfg.adam_beta2 ** (k + 1))
            step = cfg.eta * mh / (np.sqrt(vh) + cfg.adam_eps)
        else:
            eta = cosine_step_size(cfg.eta, k, K) if cfg.update_rule == "cosine" else cfg.eta
            step = eta * np.sign(g)
        p = np.clip(p - wg * step, -cfg.delta, cfg.delta)
        if callback is not None:
            callback(k + 1, p)
    return p, np.array(trace, dtype=float).reshape(-1, 3)


def apply_perturbation(fields: FieldSequence, p: np.ndarray, stats: StandardizationStats) -> FieldSequence:
    """Physical fields plus the destandardized perturbation ``p``; a zero
    perturbation reproduces ``fields`` bit for bit."""
    _, sd = stats.vectors(UPSTREAM_VARIABLES)
    data = np.array(fields.data)
    for k, name in enumerate(UPSTREAM_VARIABLES):
        if np.any(p[:, k] != 0):
            data[:, fields.index(name)] += p[:, k] * sd[k]
    return fields.replace(data)


def run_attack(fields: FieldSequence, z_orig, z_target, model: SurrogateModel, cfg: AttackConfig = AttackConfig(),
               gravity: float = GRAVITY, callback=None):
    """Attack ``fields`` toward the target mask. Returns (adversarial fields, trace)."""
    problem = prepare(fields, z_orig, z_target, model, cfg, gravity)
    p, trace = optimize(problem, model, cfg, callback)
    return apply_perturbation(fields, p, model.field_stats), trace


def run_baseline(fields: FieldSequence, z_orig, z_target, model: SurrogateModel, cfg: AttackConfig,
                 gravity: float = GRAVITY):
    """One of the reference attackers (undilated, unweighted objective)."""
    if cfg.method not in BASELINES:
        raise ValueError(f"unknown baseline {cfg.method!r}; expected one of {BASELINES}")
    return run_attack(fields, z_orig, z_target, model, cfg, gravity)


def write_trace(trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "loss", "linf"])
        for k, loss, linf in trace:
            w.writerow([int(k), repr(float(loss)), repr(float(linf))])
