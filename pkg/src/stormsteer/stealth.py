"""Anomaly detectors used to test whether adversarial forecasts stand out:
PCA reconstruction error, isolation forest and local outlier factor, all
operating on block-statistic feature vectors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma
from sklearn.ensemble import IsolationForest
from sklearn.neighbors import LocalOutlierFactor

from .fields import FieldSequence, StandardizationStats

KINDS = ("pca", "iforest", "lof")
MIN_SAMPLES = 20
BLOCK = 8


def block_features(fields: FieldSequence, stats: StandardizationStats | None = None, block: int = BLOCK) -> np.ndarray:
    """Mean, std, min and max over ``block`` x ``block`` cell tiles for every
    variable and time step (trailing partial tiles included)."""
    data = np.asarray(fields.data, dtype=float)
    if stats is not None:
        mu, sd = stats.vectors(fields.variables)
        data = (data - mu[None, :, None, None]) / sd[None, :, None, None]
    T, V, r, c = data.shape
    feats = []
    for i0 in range(0, r, block):
        for j0 in range(0, c, block):
            tile = data[:, :, i0:i0 + block, j0:j0 + block].reshape(T, V, -1)
            feats.append(np.stack([tile.mean(-1), tile.std(-1), tile.min(-1), tile.max(-1)], axis=-1))
    out = np.stack(feats, axis=2).ravel()
    if not np.all(np.isfinite(out)):
        raise ValueError("non-finite features")
    return out


def average_path_length(n) -> float:
    """Expected unsuccessful-search path length in a binary search tree of n
    points: 2 H(n-1) - 2 (n-1) / n."""
    if n <= 1:
        return 0.0
    if n == 2:
        return 1.0
    h = float(digamma(n)) + np.euler_gamma  # H(n-1)
    return 2.0 * h - 2.0 * (n - 1) / n


@dataclass
class DetectorModel:
    kind: str
    contamination: float
    threshold: float
    mean: np.ndarray  # feature z-scoring
    scale: np.ndarray
    state: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.mean)

    def _z(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise ValueError(f"feature dimension {X.shape[1]} does not match fitted {self.dim}")
        return (X - self.mean) / self.scale

    def scores(self, X) -> np.ndarray:
        Z = self._z(X)
        if self.kind == "pca":
            C = self.state["components"]
            R = Z - self.state["center"]
            resid = R - (R @ C.T) @ C
            return np.sum(resid * resid, axis=1)
        return -self.state["estimator"].score_samples(Z)


def fit(kind: str, clean, contamination: float = 0.05, seed: int = 0, variance: float = 0.95,
        n_trees: int = 100, max_samples: int = 256, n_neighbors: int = 20) -> DetectorModel:
    """Fit a detector on clean feature vectors and set its threshold at the
    (1 - contamination) quantile of the clean scores."""
    if kind not in KINDS:
        raise ValueError(f"unknown detector kind {kind!r}; expected one of {KINDS}")
    X = np.asarray(clean, dtype=float)
    if X.ndim != 2 or len(X) < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} clean samples, got {len(X) if X.ndim == 2 else 0}")
    if not 0 < contamination < 0.5:
        raise ValueError("contamination must lie in (0, 0.5)")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    model = DetectorModel(kind, contamination, math.nan, mean, scale)
    Z = (X - mean) / scale
    n = len(Z)
    if kind == "pca":
        center = Z.mean(axis=0)
        _, s, Vt = np.linalg.svd(Z - center, full_matrices=False)
        ev = s ** 2
        total = ev.sum()
        k = int(np.searchsorted(np.cumsum(ev) / total, variance) + 1) if total > 0 else 0
        model.state = {"center": center, "components": Vt[:k], "n_components": k}
        train_scores = model.scores(X)
    elif kind == "iforest":
        est = IsolationForest(n_estimators=n_trees, max_samples=min(max_samples, n), random_state=seed)
        est.fit(Z)
        model.state = {"estimator": est}
        train_scores = -est.score_samples(Z)
    else:
        est = LocalOutlierFactor(n_neighbors=min(n_neighbors, n - 1), novelty=True)
        est.fit(Z)
        model.state = {"estimator": est}
        train_scores = -est.negative_outlier_factor_
    model.threshold = float(np.quantile(train_scores, 1.0 - contamination))
    return model


def score(model: DetectorModel, sample) -> tuple[float, bool]:
    s = float(model.scores(sample)[0])
    return s, s > model.threshold


def flags(model: DetectorModel, X) -> np.ndarray:
    return model.scores(X) > model.threshold


@dataclass(frozen=True)
class StealthReport:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    precision_undefined: bool = False

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def confusion_report(adv_flags, clean_flags) -> StealthReport:
    adv_flags = np.asarray(adv_flags, dtype=bool)
    clean_flags = np.asarray(clean_flags, dtype=bool)
    tp, fn = int(adv_flags.sum()), int((~adv_flags).sum())
    fp, tn = int(clean_flags.sum()), int((~clean_flags).sum())
    undefined = tp + fp == 0
    precision = 0.0 if undefined else tp / (tp + fp)
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return StealthReport(precision, recall, f1, tp, fp, fn, tn, undefined)


def evaluate(model: DetectorModel, clean, adversarial) -> StealthReport:
    """Precision/recall/F1 with adversarial samples as the positive class."""
    clean = np.atleast_2d(np.asarray(clean, dtype=float))
    adversarial = np.atleast_2d(np.asarray(adversarial, dtype=float))
    if clean.size == 0 or adversarial.size == 0:
        raise ValueError("evaluate needs non-empty clean and adversarial sets")
    return confusion_report(flags(model, adversarial), flags(model, clean))
