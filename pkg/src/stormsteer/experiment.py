"""End-to-end synthetic benchmark: scenario suite, surrogate training,
attacks by every method, and the scores used to compare them."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .attack import AttackConfig, run_attack
from .detector import DetectorConfig, detect_fields
from .fields import FieldSequence, compute_stats, derive_inputs, standardize
from .geo import GeoPoint, GridGeometry
from .labels import DilationParams, dilate
from .metrics import closeness, location_rates, pooled_scores, trajectory_scores
from .surrogate import SurrogateModel, TrainConfig, model_inputs, train
from .synth import ScenarioSpec, VortexSpec, synth_scenario
from .stealth import KINDS, block_features, evaluate
from .stealth import fit as fit_detector
from .targetgen import TargetGenParams, make_target

log = logging.getLogger(__name__)

# Frozen after the first calibration run on the default suite; see README.
SUITE_TRAIN = TrainConfig(epochs=30)
SUITE_DILATION = DilationParams(1.0, 2)
SUITE_ETA = 0.5
SUITE_ITERS = 30
DELTA_SWEEP = (10.0, 5.0, 2.5, 1.0, 0.5, 0.3)


@dataclass(frozen=True)
class SuiteConfig:
    rows: int = 24
    cols: int = 48
    lat0: float = 5.0
    lon0: float = 130.0
    spacing: float = 1.0
    T: int = 12
    n_attack: int = 20
    n_train: int = 40
    n_heldout: int = 10
    seed: int = 2024
    noise_amplitude: float = 1.0

    @property
    def geometry(self) -> GridGeometry:
        return GridGeometry(self.rows, self.cols, self.lat0, self.lon0, self.spacing)


@dataclass
class Scenario:
    spec: ScenarioSpec
    fields: FieldSequence
    truth: list
    mask: np.ndarray
    tracks: list


def random_spec(cfg: SuiteConfig, rng: np.random.Generator, seed: int) -> ScenarioSpec:
    """One westward-moving vortex entering from the eastern part of the domain."""
    g = cfg.geometry
    lat = rng.uniform(g.lat0 + 6.0, g.lat0 + 11.0)
    lon = rng.uniform(g.lon0 + 0.72 * g.cols * g.spacing, g.lon0 + 0.82 * g.cols * g.spacing)
    bearing = rng.uniform(280.0, 305.0)
    v = VortexSpec(
        start=GeoPoint(lat, lon), bearing_deg=bearing, speed_km=rng.uniform(90.0, 120.0),
        depth=rng.uniform(1500.0, 2500.0), core_radius=rng.uniform(2.2, 2.8),
        peak_wind=rng.uniform(20.0, 30.0), wind_radius=1.0, warm_core_amp=rng.uniform(300.0, 500.0),
        lifetime_steps=cfg.T,
    )
    return ScenarioSpec(geometry=g, T=cfg.T, vortices=(v,), noise_amplitude=cfg.noise_amplitude, seed=seed)


def build_scenarios(cfg: SuiteConfig, n: int, stream: int, det_cfg: DetectorConfig = DetectorConfig(),
                    require_track: bool = True) -> list[Scenario]:
    """``n`` scenarios from an independent seed stream; scenarios in which the
    detector finds nothing are skipped when ``require_track``."""
    rng = np.random.default_rng([cfg.seed, stream])
    out = []
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 10 * n + 10:
            raise RuntimeError("could not generate enough detectable scenarios")
        spec = random_spec(cfg, rng, int(rng.integers(2 ** 31)))
        f, truth = synth_scenario(spec)
        mask, tracks = detect_fields(f, det_cfg)
        if require_track and not tracks:
            continue
        out.append(Scenario(spec, f, truth, mask, tracks))
    return out


def training_arrays(scenarios, input_stats, dilation: DilationParams | None):
    xs, ys = [], []
    for s in scenarios:
        inp = derive_inputs(s.fields)
        xs.append(model_inputs(inp, input_stats))
        lab = s.mask if dilation is None else dilate(s.mask, dilation, wrap_lon=s.fields.geometry.is_global)
        ys.append(lab)
    return np.concatenate(xs), np.concatenate(ys)


def suite_attack(method: str, **kw) -> AttackConfig:
    """Attack config at the frozen suite step size and iteration count."""
    return AttackConfig(eta=kw.pop("eta", SUITE_ETA), iters=kw.pop("iters", SUITE_ITERS), method=method, **kw)


def fit_surrogate(train_scen, dilation: DilationParams | None = SUITE_DILATION,
                  cfg: TrainConfig = SUITE_TRAIN) -> SurrogateModel:
    field_stats = compute_stats([s.fields for s in train_scen])
    input_stats = compute_stats([derive_inputs(s.fields).as_fields() for s in train_scen])
    x, y = training_arrays(train_scen, input_stats, dilation)
    return train(x, y, cfg, input_stats=input_stats, field_stats=field_stats)


def heldout_rates(model: SurrogateModel, scenarios):
    """Cellwise rates of the thresholded surrogate against the detector masks."""
    preds, masks = [], []
    for s in scenarios:
        P = model.forward(model_inputs(derive_inputs(s.fields), model.input_stats))
        preds.append(P >= 0.5)
        masks.append(s.mask)
    return location_rates(np.concatenate(preds), np.concatenate(masks))


@dataclass
class AttackOutcome:
    method: str
    adv_fields: FieldSequence
    adv_track: object
    pred_tracks: list
    scores: object
    delta_c: float
    surrogate_tpr: float
    trace: np.ndarray


def attack_scenario(s: Scenario, model: SurrogateModel, cfg: AttackConfig,
                    tg: TargetGenParams = TargetGenParams(), det_cfg: DetectorConfig = DetectorConfig()):
    z_target, adv = make_target(s.mask, s.tracks, s.fields.geometry, 0, tg)
    adv_fields, trace = run_attack(s.fields, s.mask, z_target, model, cfg)
    _, pred = detect_fields(adv_fields, det_cfg)
    sc = trajectory_scores(pred, [adv])
    std = model.field_stats
    dc = closeness(standardize(s.fields, std), standardize(adv_fields, std))
    P = model.forward(model_inputs(derive_inputs(adv_fields), model.input_stats))
    tpr = location_rates(P >= 0.5, z_target).TPR
    return AttackOutcome(cfg.method, adv_fields, adv, pred, sc, dc, tpr, trace)


def summarize(outcomes) -> dict:
    dr, far = pooled_scores(o.scores for o in outcomes)
    return {
        "DR": dr, "FAR": far,
        "delta_c": float(np.mean([o.delta_c for o in outcomes])),
        "surrogate_tpr": float(np.nanmean([o.surrogate_tpr for o in outcomes])),
        "n": len(outcomes),
    }


def run_suite(scenarios, model, cfgs: dict, tg: TargetGenParams = TargetGenParams(),
              det_cfg: DetectorConfig = DetectorConfig()) -> dict:
    """Attack every scenario with every named config; returns name -> outcomes."""
    out = {}
    for name, cfg in cfgs.items():
        t0 = time.time()
        out[name] = [attack_scenario(s, model, cfg, tg, det_cfg) for s in scenarios]
        log.info("%s: %s in %.1fs", name, summarize(out[name]), time.time() - t0)
    return out


def stealth_recalls(detectors: dict, clean_fields, adv_fields, stats) -> dict:
    """Recall of each fitted detector on ``adv_fields`` (clean samples are the
    negatives)."""
    Xc = np.array([block_features(f, stats) for f in clean_fields])
    Xa = np.array([block_features(f, stats) for f in adv_fields])
    return {k: evaluate(d, Xc, Xa).recall for k, d in detectors.items()}


def fit_detectors(clean_fields, stats, seed: int = 0) -> dict:
    X = np.array([block_features(f, stats) for f in clean_fields])
    return {k: fit_detector(k, X, seed=seed) for k in KINDS}
