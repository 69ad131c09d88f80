"""Rule-based cyclone detector and tracker (the black box being attacked).

Stage one finds candidate centres per snapshot: strict MSL minima that are the
deepest within a separation radius, enclosed by an MSL closed contour and
co-located with a warm-core thickness maximum that has its own closed
contour. Stage two stitches candidates greedily through time and keeps tracks
that live long enough with enough qualifying points.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .fields import DetectorInputs, FieldSequence, GRAVITY, derive_inputs
from .geo import GridGeometry, central_angle, cosine_law_angle, destination
from .tracks import TrackPoint, Trajectory

N_RAYS = 16
MISSING_WIND = 1e20


@dataclass(frozen=True)
class DetectorConfig:
    min_separation_deg: float = 6.0
    msl_contour_delta: float = 200.0
    msl_contour_radius_deg: float = 5.5
    thickness_contour_delta: float = 58.8
    thickness_contour_radius_deg: float = 6.5
    thickness_peak_tolerance_deg: float = 1.0
    max_step_deg: float = 8.0
    max_gap_hours: float = 24.0
    min_lifetime_hours: float = 54.0
    min_qualified_steps: int = 10
    wind_threshold: float = 10.0
    elevation_max: float = 150.0
    lat_band: tuple[float, float] = (-50.0, 50.0)
    step_hours: float = 6.0
    regional_wind_radius_deg: float = 2.0
    epsilon: float = 1e-8

    def __post_init__(self):
        object.__setattr__(self, "lat_band", tuple(float(x) for x in self.lat_band))
        for f in dataclasses.fields(self):
            if f.name in ("lat_band", "epsilon"):
                continue
            if not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be positive")
        if not self.lat_band[0] < self.lat_band[1]:
            raise ValueError("lat_band must be an increasing pair")

    @property
    def max_gap_steps(self) -> int:
        return int(math.floor(self.max_gap_hours / self.step_hours + 1e-9))

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown detector option(s): {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lat_band"] = list(self.lat_band)
        return d


@dataclass(frozen=True)
class Candidate:
    t: int
    i: int
    j: int
    lat: float
    lon: float
    msl: float
    elevation: float
    regional_max_wind: float

    @property
    def loc(self) -> tuple[int, int]:
        return (self.i, self.j)


@lru_cache(maxsize=64)
def _ray_table(geometry: GridGeometry, radius_deg: float):
    """Per-row sample offsets along 16 great-circle rays.

    Returns (rows_idx, col_off) with shape (rows, 16, K); rows_idx is -1 where
    the sample falls off the grid in latitude.
    """
    k = int(math.floor(radius_deg / geometry.spacing + 1e-9))
    dists = geometry.spacing * np.arange(1, k + 1)
    bearings = np.arange(N_RAYS) * (360.0 / N_RAYS)
    b, s = np.meshgrid(bearings, dists, indexing="ij")
    rows_idx = np.full((geometry.rows, N_RAYS, k), -1, dtype=int)
    col_off = np.zeros((geometry.rows, N_RAYS, k), dtype=int)
    for i in range(geometry.rows):
        lat, lon = destination(geometry.lat_of_row(i), 0.0, b, s, earth_radius_km=180.0 / math.pi)
        fi = np.floor((lat - geometry.lat0) / geometry.spacing + 0.5).astype(int)
        dl = (lon + 180.0) % 360.0 - 180.0
        col_off[i] = np.floor(dl / geometry.spacing + 0.5).astype(int)
        rows_idx[i] = np.where((fi >= 0) & (fi < geometry.rows), fi, -1)
    return rows_idx, col_off


def _ray_samples(field2d: np.ndarray, geometry: GridGeometry, i: int, j: int, radius_deg: float):
    """Field values along the rays from (i, j); NaN where off-grid."""
    rows_idx, col_off = _ray_table(geometry, radius_deg)
    ri = rows_idx[i]
    cj = j + col_off[i]
    valid = ri >= 0
    if geometry.is_global:
        cj = cj % geometry.cols
    else:
        valid &= (cj >= 0) & (cj < geometry.cols)
    vals = np.full(ri.shape, np.nan)
    vals[valid] = field2d[ri[valid], cj[valid]]
    return vals


def closed_contour(field2d, geometry, i, j, delta, radius_deg, kind="min") -> bool:
    """True if every ray from (i, j) rises (kind='min') or falls (kind='max') by
    at least ``delta`` relative to the centre value within ``radius_deg``."""
    vals = _ray_samples(field2d, geometry, i, j, radius_deg)
    centre = field2d[i, j]
    change = vals - centre if kind == "min" else centre - vals
    with np.errstate(invalid="ignore"):
        ok = np.nan_to_num(change, nan=-np.inf) >= delta
    return bool(ok.any(axis=1).all()) if ok.shape[1] else False


def _neighbours(a: np.ndarray, global_lon: bool):
    """The 8 neighbour arrays of a 2D field, clamped in latitude and wrapped
    (global grid) or clamped (regional grid) in longitude."""
    p = np.pad(a, ((1, 1), (0, 0)), mode="edge")
    p = np.pad(p, ((0, 0), (1, 1)), mode="wrap" if global_lon else "edge")
    r, c = a.shape
    return [p[1 + di:1 + di + r, 1 + dj:1 + dj + c] for di in (-1, 0, 1) for dj in (-1, 0, 1) if (di, dj) != (0, 0)]


def local_minima(msl2d: np.ndarray, global_lon: bool) -> np.ndarray:
    """Boolean map of strict minima over the 8-neighbourhood."""
    out = np.ones(msl2d.shape, dtype=bool)
    for nb in _neighbours(msl2d, global_lon):
        out &= msl2d < nb
    return out


def _is_missing(w):
    w = np.asarray(w, dtype=float)
    return np.isnan(w) | (np.abs(w - MISSING_WIND) < 1e-6)


def regional_max_wind(inp: DetectorInputs, t: int, loc: tuple[int, int], cfg: DetectorConfig = DetectorConfig()) -> float:
    """Maximum 10 m wind within ``regional_wind_radius_deg + epsilon`` of a cell,
    ignoring missing values; the cell's own wind if no neighbour qualifies."""
    g = inp.geometry
    i0, j0 = loc
    wind = inp.wind10[t]
    limit = cfg.regional_wind_radius_deg + cfg.epsilon
    band = int(math.ceil(limit / g.spacing)) + 1
    rows = np.arange(max(0, i0 - band), min(g.rows, i0 + band + 1))
    lat = g.lats[rows][:, None]
    lon = g.lons[None, :]
    d = np.degrees(cosine_law_angle(g.lat_of_row(i0), g.lon_of_col(j0), lat, lon))
    w = wind[rows]
    sel = (d <= limit) & ~_is_missing(w)
    if not sel.any():
        return float(wind[i0, j0])
    return float(w[sel].max())


def _thickness_ok(thick2d, geometry, i, j, cfg) -> bool:
    g = geometry
    band = int(math.ceil(cfg.thickness_peak_tolerance_deg / g.spacing)) + 1
    rows = np.arange(max(0, i - band), min(g.rows, i + band + 1))
    if g.is_global:
        cols = np.arange(j - 4 * band, j + 4 * band + 1) % g.cols
        cols = np.unique(cols)
    else:
        cols = np.arange(max(0, j - 4 * band), min(g.cols, j + 4 * band + 1))
    lat = g.lats[rows][:, None]
    lon = g.lons[cols][None, :]
    d = np.degrees(central_angle(g.lat_of_row(i), g.lon_of_col(j), lat, lon))
    near = d <= cfg.thickness_peak_tolerance_deg + 1e-9
    vals = np.where(near, thick2d[np.ix_(rows, cols)], -np.inf)
    # rows and cols ascend, so argmax breaks ties lexicographically
    k = int(np.argmax(vals))
    pi, pj = rows[k // len(cols)], cols[k % len(cols)]
    return closed_contour(
        thick2d, g, pi, pj, cfg.thickness_contour_delta, cfg.thickness_contour_radius_deg, kind="max"
    )


def detect_candidates(inp: DetectorInputs, t: int, cfg: DetectorConfig = DetectorConfig()) -> list[Candidate]:
    g = inp.geometry
    msl = inp.msl[t]
    minima = np.argwhere(local_minima(msl, g.is_global))
    if len(minima) == 0:
        return []
    vals = msl[minima[:, 0], minima[:, 1]]
    lat = g.lats[minima[:, 0]]
    lon = g.lons[minima[:, 1]]
    sep = np.degrees(central_angle(lat[:, None], lon[:, None], lat[None, :], lon[None, :]))
    idx = np.arange(len(minima))
    # argwhere is row-major, so a lower index means a lexicographically lower (i, j)
    deeper = (vals[None, :] < vals[:, None]) | ((vals[None, :] == vals[:, None]) & (idx[None, :] < idx[:, None]))
    suppressed = ((sep <= cfg.min_separation_deg) & deeper).any(axis=1)

    out = []
    for k in np.flatnonzero(~suppressed):
        i, j = int(minima[k, 0]), int(minima[k, 1])
        if not closed_contour(msl, g, i, j, cfg.msl_contour_delta, cfg.msl_contour_radius_deg, kind="min"):
            continue
        if not _thickness_ok(inp.thickness[t], g, i, j, cfg):
            continue
        out.append(
            Candidate(
                t=t, i=i, j=j, lat=float(g.lat_of_row(i)), lon=float(g.lon_of_col(j)),
                msl=float(msl[i, j]), elevation=float(inp.elevation[t, i, j]),
                regional_max_wind=regional_max_wind(inp, t, (i, j), cfg),
            )
        )
    return out


def _qualifies(c: Candidate, cfg: DetectorConfig) -> bool:
    return (
        c.regional_max_wind >= cfg.wind_threshold
        and c.elevation <= cfg.elevation_max
        and cfg.lat_band[0] <= c.lat <= cfg.lat_band[1]
    )


def _keep(track: list[Candidate], cfg: DetectorConfig) -> bool:
    lifetime = (track[-1].t - track[0].t) * cfg.step_hours
    qualified = sum(_qualifies(c, cfg) for c in track)
    return lifetime >= cfg.min_lifetime_hours - 1e-9 and qualified >= cfg.min_qualified_steps


def stitch(candidates_by_t, cfg: DetectorConfig = DetectorConfig()) -> list[Trajectory]:
    """Greedy nearest-neighbour stitching in time order.

    ``candidates_by_t`` is a mapping t -> candidates or a flat iterable of
    candidates. Tracks are extended in creation order; each takes the nearest
    unclaimed candidate within ``max_step_deg`` (ties to the lower (i, j)).
    """
    if isinstance(candidates_by_t, dict):
        flat = [c for cs in candidates_by_t.values() for c in cs]
    else:
        flat = list(candidates_by_t)
    by_t: dict[int, list[Candidate]] = {}
    for c in flat:
        by_t.setdefault(c.t, []).append(c)

    active: list[list[Candidate]] = []
    finished: list[list[Candidate]] = []
    for t in sorted(by_t):
        cands = sorted(by_t[t], key=lambda c: (c.i, c.j))
        claimed = [False] * len(cands)
        still = []
        for track in active:
            if t - track[-1].t > cfg.max_gap_steps:
                finished.append(track)
                continue
            still.append(track)
        active = still
        if cands:
            lat = np.array([c.lat for c in cands])
            lon = np.array([c.lon for c in cands])
            for track in active:
                last = track[-1]
                d = np.degrees(central_angle(last.lat, last.lon, lat, lon))
                d[np.array(claimed)] = np.inf
                k = int(np.argmin(d))
                if d[k] <= cfg.max_step_deg:
                    track.append(cands[k])
                    claimed[k] = True
        for k, c in enumerate(cands):
            if not claimed[k]:
                active.append([c])
    finished.extend(active)
    finished.sort(key=lambda tr: (tr[0].t, tr[0].i, tr[0].j))

    out = []
    for track in finished:
        if _keep(track, cfg):
            out.append(
                Trajectory(tuple(TrackPoint(c.t, c.lat, c.lon, c.msl, c.regional_max_wind, c.elevation) for c in track))
            )
    return out


def detect(inp: DetectorInputs, cfg: DetectorConfig = DetectorConfig()) -> tuple[np.ndarray, list[Trajectory]]:
    """Run both stages; returns the (T, r, c) binary mask and the trajectories."""
    cands = {t: detect_candidates(inp, t, cfg) for t in range(inp.T)}
    tracks = stitch(cands, cfg)
    mask = np.zeros((inp.T,) + inp.geometry.shape)
    g = inp.geometry
    for tr in tracks:
        for p in tr.points:
            i, j = g.nearest_index(p.lat, p.lon)
            mask[p.t, i, j] = 1.0
    return mask, tracks


def detect_fields(f: FieldSequence, cfg: DetectorConfig = DetectorConfig(), gravity: float = GRAVITY):
    return detect(derive_inputs(f, gravity), cfg)
