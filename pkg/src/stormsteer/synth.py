"""Synthetic forecast scenarios: idealized vortices moving along scripted
great-circle tracks over smooth noisy backgrounds."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .fields import GRAVITY, UPSTREAM_VARIABLES, FieldSequence
from .geo import EARTH_RADIUS_KM, GeoPoint, GridGeometry, central_angle, destination_point, wrap_dlon
from .tracks import TrackPoint, Trajectory

# noise standard deviation per variable at noise_amplitude == 1
NOISE_SCALES = {"msl": 100.0, "u10": 1.0, "v10": 1.0, "z300": 20.0, "z500": 20.0}
TAPER_START = 3.0  # in units of wind_radius


def _schedule(value, n: int) -> list[float]:
    if isinstance(value, (int, float)):
        return [float(value)] * n
    vals = [float(v) for v in value]
    if len(vals) < n:
        raise ValueError(f"schedule needs {n} entries, got {len(vals)}")
    return vals[:n]


@dataclass(frozen=True)
class VortexSpec:
    start: GeoPoint
    bearing_deg: object = 270.0  # scalar or per-step list
    speed_km: object = 100.0  # km per step; scalar or per-step list
    depth: float = 2000.0
    core_radius: float = 2.5
    peak_wind: float = 25.0
    wind_radius: float = 1.0
    warm_core_amp: float = 400.0
    lifetime_steps: int = 12
    start_step: int = 0

    def __post_init__(self):
        if self.depth < 0 or self.peak_wind < 0 or self.warm_core_amp < 0:
            raise ValueError("depth, peak_wind and warm_core_amp must be non-negative")
        if not (self.core_radius > 0 and self.wind_radius > 0):
            raise ValueError("radii must be positive")
        if self.lifetime_steps < 1:
            raise ValueError("lifetime_steps must be >= 1")

    def centres(self) -> list[GeoPoint]:
        n = self.lifetime_steps - 1
        bearings = _schedule(self.bearing_deg, n)
        speeds = _schedule(self.speed_km, n)
        pts = [self.start]
        for b, s in zip(bearings, speeds):
            pts.append(destination_point(pts[-1], b, s, EARTH_RADIUS_KM))
        for p in pts:
            if abs(p.lat) > 89.0:
                raise ValueError("vortex track leaves |lat| <= 89")
        return pts

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["start"] = {"lat": self.start.lat, "lon": self.start.lon}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "VortexSpec":
        d = dict(d)
        s = d.pop("start")
        start = GeoPoint(*s) if isinstance(s, (list, tuple)) else GeoPoint(s["lat"], s["lon"])
        return cls(start=start, **d)


@dataclass(frozen=True)
class LandBox:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    elevation_m: float


@dataclass(frozen=True)
class ScenarioSpec:
    geometry: GridGeometry
    T: int = 12
    background_msl: float = 101000.0
    background_z500: float = 57000.0
    background_thickness: float = 34000.0
    steering_wind: tuple[float, float] = (0.0, 0.0)
    noise_amplitude: float = 1.0
    noise_corr_deg: float = 3.0
    vortices: tuple[VortexSpec, ...] = ()
    land: tuple[LandBox, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.noise_amplitude < 0:
            raise ValueError("noise_amplitude must be non-negative")
        object.__setattr__(self, "vortices", tuple(self.vortices))
        object.__setattr__(self, "land", tuple(self.land))

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["geometry"] = self.geometry.to_dict()
        d["steering_wind"] = list(self.steering_wind)
        d["vortices"] = [v.to_dict() for v in self.vortices]
        d["land"] = [dataclasses.asdict(b) for b in self.land]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        geometry = GridGeometry.from_dict(d.pop("geometry"))
        vortices = tuple(VortexSpec.from_dict(v) for v in d.pop("vortices", []))
        land = tuple(LandBox(**b) for b in d.pop("land", []))
        if "steering_wind" in d:
            d["steering_wind"] = tuple(d["steering_wind"])
        return cls(geometry=geometry, vortices=vortices, land=land, **d)


def rankine_profile(r, peak_wind: float, wind_radius: float):
    """Modified Rankine tangential wind with a Gaussian taper beyond
    ``TAPER_START * wind_radius`` (r and wind_radius in degrees)."""
    r = np.asarray(r, dtype=float)
    x = r / wind_radius
    with np.errstate(divide="ignore"):
        outer = peak_wind * np.power(np.where(x > 0, 1.0 / np.maximum(x, 1e-300), 0.0), 0.6)
    v = np.where(x <= 1.0, peak_wind * x, outer)
    taper = np.where(x > TAPER_START, np.exp(-((x - TAPER_START) ** 2)), 1.0)
    return v * taper


def _smooth_noise(rng, shape, sigma_cells, wrap_lon):
    white = rng.standard_normal(shape)
    if sigma_cells <= 0:
        return white
    # independent in time, smooth in space
    mode = ["constant", "reflect", "wrap" if wrap_lon else "reflect"]
    sm = gaussian_filter(white, sigma=(0, sigma_cells, sigma_cells), mode=mode)
    sd = sm.reshape(shape[0], -1).std(axis=1)
    return sm / np.where(sd > 0, sd, 1.0)[:, None, None]


def vortex_fields(v: VortexSpec, centre: GeoPoint, lat: np.ndarray, lon: np.ndarray):
    """MSL depression, (u, v) wind and thickness bump of one vortex on a mesh."""
    r = np.degrees(central_angle(centre.lat, centre.lon, lat, lon))
    msl = -v.depth * np.exp(-(r ** 2) / (2 * v.core_radius ** 2))
    warm = v.warm_core_amp * np.exp(-(r ** 2) / (2 * v.core_radius ** 2))
    speed = rankine_profile(r, v.peak_wind, v.wind_radius)
    dx = wrap_dlon(lon - centre.lon) * math.cos(math.radians(centre.lat))
    dy = lat - centre.lat
    rho = np.hypot(dx, dy)
    safe = np.where(rho > 0, rho, 1.0)
    # counter-clockwise in the northern hemisphere
    sense = 1.0 if centre.lat >= 0 else -1.0
    u = np.where(rho > 0, -sense * speed * dy / safe, 0.0)
    w = np.where(rho > 0, sense * speed * dx / safe, 0.0)
    return msl, u, w, warm


def synth_scenario(spec: ScenarioSpec) -> tuple[FieldSequence, list[Trajectory]]:
    """Generate upstream fields and the ground-truth vortex tracks."""
    g = spec.geometry
    T = spec.T
    lat, lon = g.mesh()
    rng = np.random.default_rng(spec.seed)
    shape = (T, g.rows, g.cols)

    data = {
        "msl": np.full(shape, spec.background_msl),
        "u10": np.full(shape, float(spec.steering_wind[0])),
        "v10": np.full(shape, float(spec.steering_wind[1])),
        "z300": np.full(shape, spec.background_z500 + spec.background_thickness),
        "z500": np.full(shape, spec.background_z500),
    }
    if spec.noise_amplitude > 0:
        sigma_cells = spec.noise_corr_deg / g.spacing
        for name in ("msl", "u10", "v10", "z300", "z500"):
            data[name] += spec.noise_amplitude * NOISE_SCALES[name] * _smooth_noise(rng, shape, sigma_cells, g.is_global)

    tracks = []
    for v in spec.vortices:
        centres = v.centres()
        pts = []
        for k, c in enumerate(centres):
            t = v.start_step + k
            if t >= T:
                break
            dm, du, dv, dw = vortex_fields(v, c, lat, lon)
            data["msl"][t] += dm
            data["u10"][t] += du
            data["v10"][t] += dv
            data["z300"][t] += dw
            pts.append(TrackPoint(t, c.lat, c.lon, spec.background_msl - v.depth, v.peak_wind, 0.0))
        tracks.append(Trajectory(tuple(pts)))

    sgeo = np.zeros(g.shape)
    for box in spec.land:
        inside = (
            (lat >= box.lat_min) & (lat <= box.lat_max)
            & (np.mod(lon - box.lon_min, 360.0) <= np.mod(box.lon_max - box.lon_min, 360.0))
        )
        sgeo[inside] = box.elevation_m * GRAVITY
    data["surface_geopotential"] = np.broadcast_to(sgeo, shape)

    f = FieldSequence(g, UPSTREAM_VARIABLES, np.stack([data[n] for n in UPSTREAM_VARIABLES], axis=1))
    return f, tracks
