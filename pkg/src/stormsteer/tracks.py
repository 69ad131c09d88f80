"""Trajectory container and GeoJSON serialization."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .geo import GridGeometry, normalize_lon


@dataclass(frozen=True)
class TrackPoint:
    t: int
    lat: float
    lon: float
    msl: float = math.nan
    wind: float = math.nan
    elevation: float = math.nan


@dataclass(frozen=True)
class Trajectory:
    points: tuple[TrackPoint, ...]
    properties: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        pts = tuple(self.points)
        ts = [p.t for p in pts]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("trajectory times must be strictly increasing")
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    @property
    def times(self) -> list[int]:
        return [p.t for p in self.points]

    @property
    def latlon(self) -> np.ndarray:
        return np.array([[p.lat, p.lon] for p in self.points], dtype=float).reshape(-1, 2)

    def at(self, t: int) -> TrackPoint | None:
        for p in self.points:
            if p.t == t:
                return p
        return None

    def with_properties(self, **props) -> "Trajectory":
        return Trajectory(self.points, {**self.properties, **props})


def rasterize_tracks(tracks, geometry: GridGeometry, T: int) -> np.ndarray:
    mask = np.zeros((T,) + geometry.shape)
    for tr in tracks:
        for p in tr.points:
            if not 0 <= p.t < T:
                raise ValueError(f"track time {p.t} outside [0, {T})")
            i, j = geometry.nearest_index(p.lat, p.lon)
            mask[p.t, i, j] = 1.0
    return mask


def _num(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else float(x)


def tracks_to_geojson(tracks, role: str | None = None) -> dict:
    features = []
    for k, tr in enumerate(tracks):
        props = {"track_id": k, **tr.properties}
        if role is not None:
            props["role"] = role
        props.update(
            t=[p.t for p in tr.points],
            msl=[_num(p.msl) for p in tr.points],
            wind=[_num(p.wind) for p in tr.points],
            elevation=[_num(p.elevation) for p in tr.points],
        )
        coords = [[float((p.lon + 180.0) % 360.0 - 180.0), float(p.lat)] for p in tr.points]
        if len(coords) == 1:
            geometry = {"type": "Point", "coordinates": coords[0]}
        else:
            geometry = {"type": "LineString", "coordinates": coords}
        features.append({"type": "Feature", "geometry": geometry, "properties": props})
    return {"type": "FeatureCollection", "features": features}


def tracks_from_geojson(doc: dict) -> list[Trajectory]:
    if doc.get("type") != "FeatureCollection":
        raise ValueError("expected a GeoJSON FeatureCollection")
    out = []
    for feat in doc["features"]:
        geom = feat["geometry"]
        coords = [geom["coordinates"]] if geom["type"] == "Point" else geom["coordinates"]
        props = dict(feat.get("properties") or {})
        n = len(coords)
        ts = props.pop("t", list(range(n)))

        def col(name):
            vals = props.pop(name, None) or [None] * n
            return [math.nan if v is None else float(v) for v in vals]

        msl, wind, elev = col("msl"), col("wind"), col("elevation")
        props.pop("track_id", None)
        pts = tuple(
            TrackPoint(int(ts[k]), float(coords[k][1]), normalize_lon(float(coords[k][0])), msl[k], wind[k], elev[k])
            for k in range(n)
        )
        out.append(Trajectory(pts, props))
    return out


def write_tracks(tracks, path, role: str | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(tracks_to_geojson(tracks, role), fh, indent=1)


def read_tracks(path) -> list[Trajectory]:
    with open(path) as fh:
        return tracks_from_geojson(json.load(fh))
