import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stormsteer.metrics import closeness, location_rates, overlap_count, pooled_scores, trajectory_scores
from stormsteer.tracks import TrackPoint, Trajectory


def track(latlon, t0=0):
    return Trajectory(tuple(TrackPoint(t0 + k, a, o) for k, (a, o) in enumerate(latlon)))


def line(lat, lon0, n, t0=0, dlon=-1.0):
    return track([(lat, lon0 + k * dlon) for k in range(n)], t0)


# location rates

def test_location_rates_identity_and_complement():
    rng = np.random.default_rng(0)
    z = rng.random((3, 8, 9)) < 0.2
    r = location_rates(z, z)
    assert r.TPR == 1.0 and r.FPR == 0.0
    r = location_rates(~z, z)
    assert r.TPR == 0.0 and r.TNR == 0.0


def test_location_rates_count_example():
    target = np.zeros(1000, bool)
    target[:10] = True
    pred = np.zeros(1000, bool)
    pred[:7] = True
    pred[500:502] = True
    r = location_rates(pred, target)
    # independent count arithmetic
    tp = sum(1 for a, b in zip(pred, target) if a and b)
    fn = sum(1 for a, b in zip(pred, target) if not a and b)
    fp = sum(1 for a, b in zip(pred, target) if a and not b)
    assert (r.tp, r.fn, r.fp, r.tn) == (tp, fn, fp, 1000 - tp - fn - fp) == (7, 3, 2, 988)
    assert r.TPR == 0.7 and r.FNR == 0.3 and r.FPR == 2 / 990
    assert r.TPR + r.FNR == 1.0 and r.TNR + r.FPR == 1.0


def test_location_rates_shape_mismatch():
    with pytest.raises(ValueError):
        location_rates(np.zeros((2, 3)), np.zeros((3, 2)))


def test_location_rates_empty_denominators_are_nan():
    r = location_rates(np.zeros(4), np.zeros(4))
    assert math.isnan(r.TPR) and r.TNR == 1.0


# trajectory scores

def test_identical_prediction():
    t = line(15.0, 160.0, 12)
    s = trajectory_scores([t], [t])
    assert s.DR == 1.0 and s.FAR == 0.0


def test_exactly_half_overlap_is_detected():
    target = line(15.0, 160.0, 12)
    # first 6 points on the target, the rest 10 degrees away
    pts = [(15.0, 160.0 - k) if k < 6 else (25.0, 160.0 - k) for k in range(12)]
    s = trajectory_scores([track(pts)], [target])
    assert s.overlap_fractions == (0.5,) and s.DR == 1.0
    pts[5] = (25.0, 155.0)
    assert trajectory_scores([track(pts)], [target]).DR == 0.0


def test_disjoint_prediction_is_false_alarm():
    s = trajectory_scores([line(40.0, 100.0, 12)], [line(15.0, 160.0, 12)])
    assert s.DR == 0.0 and s.FAR == 1.0


def test_radius_is_strict_and_time_aligned():
    target = track([(10.0, 150.0)])
    assert overlap_count(target, track([(10.0, 151.999)])) == 1
    assert overlap_count(target, track([(12.0, 150.0)])) == 0  # exactly 2 degrees
    assert overlap_count(target, track([(10.0, 150.0)], t0=1)) == 0


def test_best_prediction_maximizes_overlap():
    target = line(15.0, 160.0, 10)
    a = track([(15.0, 160.0 - k) if k < 3 else (30.0, 160.0) for k in range(10)])
    b = track([(15.0, 160.0 - k) if k < 7 else (30.0, 160.0) for k in range(10)])
    s = trajectory_scores([a, b], [target])
    assert s.overlap_fractions == (0.7,) and s.DR == 1.0 and s.FAR == 0.0


def test_empty_lists_give_nan():
    s = trajectory_scores([], [])
    assert math.isnan(s.DR) and math.isnan(s.FAR) and s.n_targets == 0 and s.n_predictions == 0
    s = trajectory_scores([], [line(15.0, 160.0, 4)])
    assert s.DR == 0.0 and math.isnan(s.FAR)


def test_pooled_scores():
    t1, t2 = line(15.0, 160.0, 8), line(30.0, 160.0, 8)
    a = trajectory_scores([t1], [t1])
    b = trajectory_scores([line(50.0, 100.0, 8)], [t2])
    assert pooled_scores([a, b]) == (0.5, 0.5)


def _random_tracks(rng, n):
    out = []
    for _ in range(n):
        lat, lon = rng.uniform(5, 30), rng.uniform(120, 170)
        length = int(rng.integers(1, 10))
        t0 = int(rng.integers(0, 4))
        pts = [(lat + rng.normal(0, 1.0) * k * 0.3, lon - k + rng.normal(0, 0.5)) for k in range(length)]
        out.append(track(pts, t0))
    return out


def test_bounds_and_order_invariance_under_permutations():
    rng = np.random.default_rng(11)
    shuffler = random.Random(5)
    for _ in range(1000):
        targets = _random_tracks(rng, int(rng.integers(1, 4)))
        # half of the predictions are noisy copies of targets so overlaps occur
        preds = _random_tracks(rng, int(rng.integers(0, 3)))
        preds += [track([(p.lat + rng.normal(0, 1.0), p.lon + rng.normal(0, 1.0)) for p in tg.points], tg.points[0].t)
                  for tg in targets if rng.random() < 0.5]
        s = trajectory_scores(preds, targets)
        assert 0.0 <= s.DR <= 1.0
        assert math.isnan(s.FAR) or 0.0 <= s.FAR <= 1.0
        p2, t2 = preds[:], targets[:]
        shuffler.shuffle(p2)
        shuffler.shuffle(t2)
        s2 = trajectory_scores(p2, t2)
        assert s2.DR == s.DR
        assert s2.FAR == s.FAR or (math.isnan(s.FAR) and math.isnan(s2.FAR))
        # a prediction that overlaps a target never increases FAR
        s3 = trajectory_scores(preds + [targets[0]], targets)
        assert math.isnan(s.FAR) or s3.FAR <= s.FAR


# closeness

def test_closeness_examples():
    a = np.zeros((2, 2))
    assert closeness(a, a) == 0.0
    b = a.copy()
    b[1, 0] = 0.8
    assert closeness(a, b) == pytest.approx(0.2, abs=1e-15)
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(3, 4, 5)), rng.normal(size=(3, 4, 5))
    assert closeness(x, x + 2 * (y - x)) == pytest.approx(2 * closeness(x, y), rel=1e-14)
    with pytest.raises(ValueError):
        closeness(np.zeros(3), np.zeros(4))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_closeness_triangle_inequality(seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.normal(size=(3, 2, 3, 4)) * rng.uniform(0.01, 100)
    assert closeness(a, c) <= closeness(a, b) + closeness(b, c) + 1e-12
