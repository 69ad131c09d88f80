"""Cell-level confusion rates, trajectory detection / false-alarm rates and
forecast closeness."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geo import central_angle


def _ratio(a, b):
    return a / b if b else math.nan


@dataclass(frozen=True)
class LocationRates:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def TPR(self):
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def FNR(self):
        return _ratio(self.fn, self.tp + self.fn)

    @property
    def TNR(self):
        return _ratio(self.tn, self.tn + self.fp)

    @property
    def FPR(self):
        return _ratio(self.fp, self.tn + self.fp)

    def to_dict(self) -> dict:
        return {"TPR": self.TPR, "TNR": self.TNR, "FPR": self.FPR, "FNR": self.FNR,
                "tp": self.tp, "tn": self.tn, "fp": self.fp, "fn": self.fn}


def location_rates(pred, target) -> LocationRates:
    pred = np.asarray(pred) > 0.5
    target = np.asarray(target) > 0.5
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    return LocationRates(
        tp=int(np.sum(pred & target)), tn=int(np.sum(~pred & ~target)),
        fp=int(np.sum(pred & ~target)), fn=int(np.sum(~pred & target)),
    )


@dataclass(frozen=True)
class TrajectoryScores:
    DR: float
    FAR: float
    n_targets: int
    n_predictions: int
    overlap_fractions: tuple = ()  # per target, best overlap / target length
    false_alarms: tuple = ()  # per prediction
    detected: tuple = field(default=())  # per target

    def to_dict(self) -> dict:
        return {"DR": self.DR, "FAR": self.FAR, "n_targets": self.n_targets,
                "n_predictions": self.n_predictions, "n_detected": int(sum(self.detected)),
                "n_false_alarms": int(sum(self.false_alarms)),
                "overlap_fractions": list(self.overlap_fractions), "false_alarms": list(self.false_alarms)}


def overlap_count(a, b, radius_deg: float = 2.0) -> int:
    """Number of same-time point pairs closer than ``radius_deg``."""
    tb = {p.t: p for p in b.points}
    n = 0
    for p in a.points:
        q = tb.get(p.t)
        if q is not None and math.degrees(float(central_angle(p.lat, p.lon, q.lat, q.lon))) < radius_deg:
            n += 1
    return n


def trajectory_scores(pred, targets, radius_deg: float = 2.0, detect_frac: float = 0.5) -> TrajectoryScores:
    """Detection rate over ``targets`` and false-alarm rate over ``pred``.

    A target is detected when its best-overlapping prediction shares at least
    ``detect_frac`` of the target's points; a prediction is a false alarm when
    it shares no point with any target. Empty denominators give NaN.
    """
    pred, targets = list(pred), list(targets)
    counts = np.array([[overlap_count(tg, pr, radius_deg) for pr in pred] for tg in targets], dtype=int)
    counts = counts.reshape(len(targets), len(pred))
    best = counts.max(axis=1) if len(pred) else np.zeros(len(targets), dtype=int)
    lengths = np.array([len(tg) for tg in targets])
    detected = tuple(bool(best[k] >= detect_frac * lengths[k]) for k in range(len(targets)))
    fracs = tuple(float(best[k] / lengths[k]) if lengths[k] else 0.0 for k in range(len(targets)))
    false = tuple(bool(counts[:, k].sum() == 0) for k in range(len(pred)))
    return TrajectoryScores(
        DR=_ratio(sum(detected), len(targets)), FAR=_ratio(sum(false), len(pred)),
        n_targets=len(targets), n_predictions=len(pred),
        overlap_fractions=fracs, false_alarms=false, detected=detected,
    )


def pooled_scores(results) -> tuple[float, float]:
    """DR and FAR pooled over several TrajectoryScores."""
    results = list(results)
    det = sum(sum(r.detected) for r in results)
    nt = sum(r.n_targets for r in results)
    fa = sum(sum(r.false_alarms) for r in results)
    npred = sum(r.n_predictions for r in results)
    return _ratio(det, nt), _ratio(fa, npred)


def closeness(a, b) -> float:
    """Mean absolute difference over all entries (arrays or FieldSequences)."""
    a = np.asarray(getattr(a, "data", a), dtype=float)
    b = np.asarray(getattr(b, "data", b), dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b))) if a.size else math.nan
