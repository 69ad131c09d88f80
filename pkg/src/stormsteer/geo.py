"""Spherical geometry: great-circle distances, bearings, forward projection,
and the regular latitude/longitude lattice used by every gridded field."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

EARTH_RADIUS_KM = 6371.0088


def normalize_lon(lon):
    """Wrap longitude(s) in degrees into [0, 360)."""
    out = np.mod(lon, 360.0)
    # np.mod(-1e-17, 360) rounds to 360.0
    out = np.where(out >= 360.0, 0.0, out)
    if np.ndim(out) == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        lat = float(self.lat)
        if not (-90.0 <= lat <= 90.0) or math.isnan(lat):
            raise ValueError(f"latitude out of range: {self.lat}")
        object.__setattr__(self, "lat", lat)
        object.__setattr__(self, "lon", normalize_lon(float(self.lon)))


def central_angle(lat1, lon1, lat2, lon2):
    """Central angle in radians between points given in degrees.

    Equal to ``arccos(clip(sin a sin b + cos a cos b cos dlon, -1, 1))`` but
    evaluated in the atan2 form, which stays accurate for tiny and
    near-antipodal separations. Broadcasts over numpy arrays.
    """
    lat1, lon1, lat2, lon2 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (lat1, lon1, lat2, lon2)))
    # order each pair so that swapping the arguments is bit-for-bit symmetric
    swap = (lat1 > lat2) | ((lat1 == lat2) & (lon1 > lon2))
    lat1, lat2 = np.where(swap, lat2, lat1), np.where(swap, lat1, lat2)
    lon1, lon2 = np.where(swap, lon2, lon1), np.where(swap, lon1, lon2)
    p1 = np.radians(lat1)
    p2 = np.radians(lat2)
    dl = np.radians(lon2 - lon1)
    sp1, cp1 = np.sin(p1), np.cos(p1)
    sp2, cp2 = np.sin(p2), np.cos(p2)
    sdl, cdl = np.sin(dl), np.cos(dl)
    num = np.hypot(cp2 * sdl, cp1 * sp2 - sp1 * cp2 * cdl)
    den = sp1 * sp2 + cp1 * cp2 * cdl
    return np.arctan2(num, den)


def cosine_law_angle(lat1, lon1, lat2, lon2):
    """Central angle in radians via the clipped spherical law of cosines.

    This is the form the regional-wind reconstruction is specified with; its
    floating-point behaviour near a distance threshold is what the ``+eps``
    rule in the detector is calibrated against.
    """
    p1 = np.radians(lat1)
    p2 = np.radians(lat2)
    l1 = np.mod(np.radians(lon1), 2 * np.pi)
    l2 = np.mod(np.radians(lon2), 2 * np.pi)
    c = np.sin(p1) * np.sin(p2) + np.cos(p1) * np.cos(p2) * np.cos(l2 - l1)
    return np.arccos(np.clip(c, -1.0, 1.0))


def great_circle_deg(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle separation of two points, in degrees of arc."""
    return float(np.degrees(central_angle(a.lat, a.lon, b.lat, b.lon)))


def destination(lat, lon, bearing_deg, distance_km, earth_radius_km=EARTH_RADIUS_KM):
    """Vectorized forward projection. Returns (lat, lon) in degrees, lon in [0, 360)."""
    phi = np.radians(lat)
    theta = np.radians(bearing_deg)
    delta = np.asarray(distance_km, dtype=float) / earth_radius_km
    sin_phi2 = np.sin(phi) * np.cos(delta) + np.cos(phi) * np.sin(delta) * np.cos(theta)
    phi2 = np.arcsin(np.clip(sin_phi2, -1.0, 1.0))
    dlam = np.arctan2(
        np.sin(theta) * np.sin(delta) * np.cos(phi),
        np.cos(delta) - np.sin(phi) * np.sin(phi2),
    )
    return np.degrees(phi2), normalize_lon(np.asarray(lon, dtype=float) + np.degrees(dlam))


def destination_point(
    start: GeoPoint, bearing_deg: float, distance_km: float, earth_radius_km: float = EARTH_RADIUS_KM
) -> GeoPoint:
    """Point reached after travelling ``distance_km`` from ``start`` along an
    initial compass bearing (0 = north, 90 = east) on a sphere."""
    if distance_km < 0:
        raise ValueError("distance_km must be non-negative")
    if earth_radius_km <= 0:
        raise ValueError("earth_radius_km must be positive")
    if distance_km == 0:
        return start
    lat, lon = destination(start.lat, start.lon, bearing_deg, distance_km, earth_radius_km)
    return GeoPoint(float(lat), float(lon))


def bearing_of_planar_vector(u) -> float:
    """Compass bearing in [0, 360) of an (east, north) vector."""
    east, north = float(u[0]), float(u[1])
    if east == 0.0 and north == 0.0:
        raise ValueError("degenerate direction")
    b = math.degrees(math.atan2(east, north)) % 360.0
    return 0.0 if b >= 360.0 else b


def wrap_dlon(dlon):
    """Longitude difference folded into [-180, 180)."""
    return (np.asarray(dlon, dtype=float) + 180.0) % 360.0 - 180.0


@dataclass(frozen=True)
class GridGeometry:
    """Regular lattice: ``lat = lat0 + i * spacing``, ``lon = lon0 + j * spacing``.

    Latitude ascends with the row index. A grid whose columns span the full
    circle (``cols * spacing == 360``) is treated as periodic in longitude.
    """

    rows: int
    cols: int
    lat0: float
    lon0: float
    spacing: float

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid dimensions must be positive")
        if not self.spacing > 0:
            raise ValueError("grid spacing must be positive")
        top = self.lat0 + (self.rows - 1) * self.spacing
        if self.lat0 < -90.0 or top > 90.0 + 1e-9:
            raise ValueError("grid latitudes exceed [-90, 90]")
        if self.cols * self.spacing > 360.0 + 1e-9:
            raise ValueError("grid longitudes overlap themselves")
        object.__setattr__(self, "lon0", normalize_lon(self.lon0))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    @property
    def is_global(self) -> bool:
        return abs(self.cols * self.spacing - 360.0) < 1e-9

    @property
    def lats(self) -> np.ndarray:
        return self.lat0 + np.arange(self.rows) * self.spacing

    @property
    def lons(self) -> np.ndarray:
        return normalize_lon(self.lon0 + np.arange(self.cols) * self.spacing)

    def lat_of_row(self, i) -> float:
        return self.lat0 + i * self.spacing

    def lon_of_col(self, j) -> float:
        return normalize_lon(self.lon0 + j * self.spacing)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """(lat, lon) arrays of shape (rows, cols)."""
        return np.meshgrid(self.lats, self.lons, indexing="ij")

    def fractional_index(self, lat: float, lon: float) -> tuple[float, float]:
        fi = (lat - self.lat0) / self.spacing
        dl = normalize_lon(lon - self.lon0)
        if dl >= 360.0 - 0.5 * self.spacing:
            # just west of lon0 within half a cell
            dl -= 360.0
        return fi, dl / self.spacing

    def contains(self, lat: float, lon: float) -> bool:
        fi, fj = self.fractional_index(lat, lon)
        ok_i = -0.5 <= fi <= self.rows - 0.5
        ok_j = self.is_global or (-0.5 <= fj <= self.cols - 0.5)
        return ok_i and ok_j

    def nearest_index(self, lat: float, lon: float) -> tuple[int, int]:
        """Grid cell nearest to a point; raises ValueError outside the grid."""
        if not self.contains(lat, lon):
            raise ValueError(f"point ({lat:.4f}, {lon:.4f}) lies outside the grid")
        fi, fj = self.fractional_index(lat, lon)
        i = min(max(int(math.floor(fi + 0.5)), 0), self.rows - 1)
        j = int(math.floor(fj + 0.5))
        j = j % self.cols if self.is_global else min(max(j, 0), self.cols - 1)
        return i, j

    def to_dict(self) -> dict:
        return {"rows": self.rows, "cols": self.cols, "lat0": self.lat0, "lon0": self.lon0, "spacing": self.spacing}

    @classmethod
    def from_dict(cls, d: dict) -> "GridGeometry":
        return cls(int(d["rows"]), int(d["cols"]), float(d["lat0"]), float(d["lon0"]), float(d["spacing"]))
