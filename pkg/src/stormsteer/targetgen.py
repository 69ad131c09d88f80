"""Adversarial target trajectories: same origin and per-step great-circle
lengths as an original track, with headings pushed away from it."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geo import EARTH_RADIUS_KM, GridGeometry, central_angle, destination, wrap_dlon
from .tracks import TrackPoint, Trajectory

MAX_ABS_LAT = 85.0

# unit vectors (east, north) for bearings 0, 45, ..., 315
COMPASS_BEARINGS = tuple(45.0 * k for k in range(8))
COMPASS = np.array([[math.sin(math.radians(b)), math.cos(math.radians(b))] for b in COMPASS_BEARINGS])


@dataclass(frozen=True)
class TargetGenParams:
    gamma1: float = 1.0
    gamma2: float = 1.0
    seed: int = 0
    earth_radius_km: float = EARTH_RADIUS_KM
    sample: bool = False  # draw j* from the probabilities instead of taking the argmax

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0 or not self.gamma1 + self.gamma2 > 0:
            raise ValueError("gamma1, gamma2 must be >= 0 with a positive sum")
        if not self.earth_radius_km > 0:
            raise ValueError("earth_radius_km must be positive")


def step_distances(traj: Trajectory, earth_radius_km: float = EARTH_RADIUS_KM) -> list[float]:
    """Great-circle length in km of each consecutive step."""
    ll = traj.latlon
    if len(ll) < 2:
        raise ValueError("need at least two points")
    ang = central_angle(ll[:-1, 0], ll[:-1, 1], ll[1:, 0], ll[1:, 1])
    return [float(a) * earth_radius_km for a in ang]


def planar_step(lat0, lon0, lat1, lon1) -> np.ndarray:
    """Local (east, north) displacement in degrees."""
    return np.array([wrap_dlon(lon1 - lon0) * math.cos(math.radians(lat0)), lat1 - lat0], dtype=float)


def direction_scores(v_orig, v_prev_adv, p: TargetGenParams) -> np.ndarray:
    """Probabilities over the 8 compass directions; favours turning away from
    ``v_orig`` and, when given, continuing along ``v_prev_adv``."""
    v_orig = np.asarray(v_orig, dtype=float)
    n = np.linalg.norm(v_orig)
    if not n > 0:
        raise ValueError("zero original displacement")
    s = p.gamma1 * np.exp(-(COMPASS @ v_orig) / n)
    if v_prev_adv is not None:
        v_prev_adv = np.asarray(v_prev_adv, dtype=float)
        na = np.linalg.norm(v_prev_adv)
        if na > 0:
            s = s + p.gamma2 * np.exp((COMPASS @ v_prev_adv) / na)
    return s / s.sum()


def synthesize_adversarial_track(traj: Trajectory, p: TargetGenParams = TargetGenParams()) -> Trajectory:
    """Adversarial counterpart of ``traj`` (same times, origin and step lengths).

    Stationary steps keep the adversarial point in place. Raises ValueError
    if any point would leave |lat| <= 85.
    """
    ll = traj.latlon
    if len(ll) < 2:
        raise ValueError("need at least two points")
    if np.any(np.abs(ll[:, 0]) > MAX_ABS_LAT):
        raise ValueError(f"track leaves |lat| <= {MAX_ABS_LAT}")
    rng = np.random.default_rng(p.seed)
    dists = step_distances(traj, p.earth_radius_km)
    out = [tuple(ll[0])]
    v_prev = None
    for k, d in enumerate(dists, start=1):
        lat_prev, lon_prev = out[-1]
        v = planar_step(ll[k - 1, 0], ll[k - 1, 1], ll[k, 0], ll[k, 1])
        if d == 0.0 or not np.linalg.norm(v) > 0:
            out.append((lat_prev, lon_prev))
            continue
        probs = direction_scores(v, v_prev, p)
        j = int(rng.choice(8, p=probs)) if p.sample else int(np.argmax(probs))
        blend = v + COMPASS[j]
        nb = np.linalg.norm(blend)
        u = blend / nb if nb > 1e-12 else COMPASS[j]
        bearing = math.degrees(math.atan2(u[0], u[1])) % 360.0
        lat, lon = destination(lat_prev, lon_prev, bearing, d, p.earth_radius_km)
        lat, lon = float(lat), float(lon)
        if abs(lat) > MAX_ABS_LAT:
            raise ValueError(f"adversarial track leaves |lat| <= {MAX_ABS_LAT}")
        v_prev = planar_step(lat_prev, lon_prev, lat, lon)
        out.append((lat, lon))
    pts = tuple(
        TrackPoint(q.t, lat, lon) for q, (lat, lon) in zip(traj.points, out)
    )
    return Trajectory(pts, {**traj.properties, "role": "adversarial"})


def rasterize(traj: Trajectory, geometry: GridGeometry, T: int) -> np.ndarray:
    """Binary (T, r, c) mask with the nearest cell of each point set."""
    mask = np.zeros((T,) + geometry.shape)
    for q in traj.points:
        if not 0 <= q.t < T:
            raise ValueError(f"track time {q.t} outside [0, {T})")
        if not geometry.contains(q.lat, q.lon):
            raise ValueError(f"point ({q.lat:.3f}, {q.lon:.3f}) lies outside the grid")
        i, j = geometry.nearest_index(q.lat, q.lon)
        mask[q.t, i, j] = 1.0
    return mask


def replace_track(mask: np.ndarray, original: Trajectory, adversarial: Trajectory, geometry: GridGeometry) -> np.ndarray:
    """Target mask: ``mask`` with the original track's cells cleared and the
    adversarial track's cells set; other tracks are left alone."""
    T = mask.shape[0]
    out = np.array(mask, dtype=float)
    out[rasterize(original, geometry, T) > 0] = 0.0
    out[rasterize(adversarial, geometry, T) > 0] = 1.0
    return out


def make_target(mask: np.ndarray, tracks, geometry: GridGeometry, which: int = 0,
                p: TargetGenParams = TargetGenParams()) -> tuple[np.ndarray, Trajectory]:
    """Target mask that steers track ``which`` and keeps the rest."""
    if not 0 <= which < len(tracks):
        raise IndexError(f"track index {which} out of range for {len(tracks)} tracks")
    adv = synthesize_adversarial_track(tracks[which], p)
    return replace_track(mask, tracks[which], adv, geometry), adv
