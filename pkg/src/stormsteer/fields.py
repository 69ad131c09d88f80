"""Gridded field sequences, derived detector inputs, standardization and the
WFLD v1 on-disk format.

A WFLD v1 file is one JSON header line followed by raw little-endian float32
values in (T, d, r, c) order::

    {"magic": "WFLD1", "T": 12, "r": 60, "c": 120, "variables": [...],
     "grid": {"lat0": -10.0, "dlat": 1.0, "lon0": 100.0, "dlon": 1.0},
     "dtype": "f32le"}\\n<payload>
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geo import GridGeometry

GRAVITY = 9.80665

UPSTREAM_VARIABLES = ("msl", "u10", "v10", "z300", "z500", "surface_geopotential")
INPUT_CHANNELS = ("msl", "wind10", "thickness", "elevation")
# single-variable products written by the pipeline (masks, labels, probabilities)
PRODUCT_VARIABLES = ("tc_mask", "tc_label", "tc_prob")
KNOWN_VARIABLES = frozenset(UPSTREAM_VARIABLES + INPUT_CHANNELS + PRODUCT_VARIABLES)

WFLD_MAGIC = "WFLD1"


class FieldFormatError(ValueError):
    """Malformed WFLD file."""


class MagicMismatchError(FieldFormatError):
    pass


class PayloadSizeError(FieldFormatError):
    pass


class NonFiniteError(FieldFormatError):
    pass


class SchemaError(FieldFormatError):
    pass


@dataclass(frozen=True)
class FieldSequence:
    """Named-variable tensor of shape (T, d, r, c) on a grid.

    The data array is stored as read-only float64.
    """

    geometry: GridGeometry
    variables: tuple[str, ...]
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        variables = tuple(self.variables)
        if len(set(variables)) != len(variables):
            raise ValueError("variable names must be unique")
        unknown = [v for v in variables if v not in KNOWN_VARIABLES]
        if unknown:
            raise ValueError(f"unknown variable(s): {unknown}")
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 4:
            raise ValueError("field data must have shape (T, d, r, c)")
        if data.shape[1] != len(variables):
            raise ValueError(f"{data.shape[1]} data channels for {len(variables)} variables")
        if data.shape[2:] != self.geometry.shape:
            raise ValueError(f"data grid {data.shape[2:]} does not match geometry {self.geometry.shape}")
        if data.shape[0] < 1:
            raise ValueError("at least one time step is required")
        if not np.all(np.isfinite(data)):
            raise ValueError("field data contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "variables", variables)
        object.__setattr__(self, "data", data)

    @property
    def T(self) -> int:
        return self.data.shape[0]

    def index(self, name: str) -> int:
        try:
            return self.variables.index(name)
        except ValueError:
            raise KeyError(f"missing variable: {name}") from None

    def var(self, name: str) -> np.ndarray:
        """(T, r, c) view of one variable."""
        return self.data[:, self.index(name)]

    def replace(self, data: np.ndarray) -> "FieldSequence":
        return FieldSequence(self.geometry, self.variables, data)

    @classmethod
    def from_dict(cls, geometry: GridGeometry, arrays: dict) -> "FieldSequence":
        names = tuple(arrays)
        return cls(geometry, names, np.stack([np.asarray(arrays[n], dtype=float) for n in names], axis=1))


@dataclass(frozen=True)
class DetectorInputs:
    """The four fields the detector and the surrogate consume, each (T, r, c)."""

    geometry: GridGeometry
    msl: np.ndarray
    wind10: np.ndarray
    thickness: np.ndarray
    elevation: np.ndarray

    @property
    def T(self) -> int:
        return self.msl.shape[0]

    def stack(self) -> np.ndarray:
        """(T, 4, r, c) in ``INPUT_CHANNELS`` order."""
        return np.stack([self.msl, self.wind10, self.thickness, self.elevation], axis=1)

    def as_fields(self) -> FieldSequence:
        return FieldSequence(self.geometry, INPUT_CHANNELS, self.stack())


def derive_inputs(f: FieldSequence, gravity: float = GRAVITY) -> DetectorInputs:
    """Wind speed, 300-500 hPa thickness and elevation from upstream variables."""
    for name in ("msl", "u10", "v10", "z300", "z500", "surface_geopotential"):
        if name not in f.variables:
            raise KeyError(f"missing variable: {name}")
    u, v = f.var("u10"), f.var("v10")
    return DetectorInputs(
        geometry=f.geometry,
        msl=np.array(f.var("msl")),
        wind10=np.sqrt(u * u + v * v),
        thickness=f.var("z300") - f.var("z500"),
        elevation=f.var("surface_geopotential") / gravity,
    )


@dataclass(frozen=True)
class StandardizationStats:
    mean: dict
    std: dict

    def __post_init__(self):
        if set(self.mean) != set(self.std):
            raise ValueError("mean and std must cover the same variables")
        for k, s in self.std.items():
            if not s > 0:
                raise ValueError(f"standard deviation for {k} must be positive, got {s}")

    def vectors(self, variables) -> tuple[np.ndarray, np.ndarray]:
        missing = [v for v in variables if v not in self.mean]
        if missing:
            raise KeyError(f"no statistics for {missing}")
        return (np.array([self.mean[v] for v in variables]), np.array([self.std[v] for v in variables]))

    def to_dict(self) -> dict:
        return {"mean": dict(self.mean), "std": dict(self.std)}

    @classmethod
    def from_dict(cls, d: dict) -> "StandardizationStats":
        return cls({k: float(v) for k, v in d["mean"].items()}, {k: float(v) for k, v in d["std"].items()})


def compute_stats(samples, min_std: float = 1e-6) -> StandardizationStats:
    """Variable-wise mean and std over one or more FieldSequences.

    Constant variables (e.g. an all-ocean surface geopotential) get std 1.0 so
    that standardization stays a valid affine map.
    """
    if isinstance(samples, FieldSequence):
        samples = [samples]
    variables = samples[0].variables
    mean, std = {}, {}
    for k, name in enumerate(variables):
        vals = np.concatenate([s.data[:, s.index(name)].ravel() for s in samples])
        m, sd = float(vals.mean()), float(vals.std())
        mean[name] = m
        std[name] = sd if sd > min_std else 1.0
    return StandardizationStats(mean, std)


def _broadcast(stats: StandardizationStats, variables) -> tuple[np.ndarray, np.ndarray]:
    mu, sd = stats.vectors(variables)
    return mu[None, :, None, None], sd[None, :, None, None]


def standardize(f: FieldSequence, stats: StandardizationStats) -> FieldSequence:
    mu, sd = _broadcast(stats, f.variables)
    return f.replace((f.data - mu) / sd)


def destandardize(f: FieldSequence, stats: StandardizationStats) -> FieldSequence:
    mu, sd = _broadcast(stats, f.variables)
    return f.replace(f.data * sd + mu)


def write_field(f: FieldSequence, path) -> None:
    g = f.geometry
    header = {
        "magic": WFLD_MAGIC,
        "T": f.T,
        "r": g.rows,
        "c": g.cols,
        "variables": list(f.variables),
        "grid": {"lat0": g.lat0, "dlat": g.spacing, "lon0": g.lon0, "dlon": g.spacing},
        "dtype": "f32le",
    }
    payload = np.ascontiguousarray(f.data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(payload)


def read_field(path) -> FieldSequence:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise MagicMismatchError("missing WFLD header line")
    try:
        header = json.loads(raw[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MagicMismatchError(f"unreadable header: {exc}") from None
    if not isinstance(header, dict) or header.get("magic") != WFLD_MAGIC:
        raise MagicMismatchError("magic mismatch: not a WFLD1 file")
    try:
        T, r, c = int(header["T"]), int(header["r"]), int(header["c"])
        variables = [str(v) for v in header["variables"]]
        grid = header["grid"]
        dtype = header["dtype"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"incomplete header: {exc}") from None
    if dtype != "f32le":
        raise SchemaError(f"unsupported dtype {dtype!r}")
    unknown = [v for v in variables if v not in KNOWN_VARIABLES]
    if unknown:
        raise SchemaError(f"unknown variable name(s) {unknown}")
    if len(set(variables)) != len(variables):
        raise SchemaError("duplicate variable names")
    if abs(float(grid["dlat"]) - float(grid["dlon"])) > 1e-12:
        raise SchemaError("only square grid spacing is supported")
    try:
        geometry = GridGeometry(r, c, float(grid["lat0"]), float(grid["lon0"]), float(grid["dlat"]))
    except ValueError as exc:
        raise SchemaError(str(exc)) from None
    payload = raw[nl + 1:]
    expected = T * len(variables) * r * c * 4
    if len(payload) != expected:
        raise PayloadSizeError(f"payload size mismatch: expected {expected} bytes, found {len(payload)}")
    data = np.frombuffer(payload, dtype="<f4").reshape(T, len(variables), r, c)
    if not np.all(np.isfinite(data)):
        raise NonFiniteError("payload contains NaN or Inf")
    return FieldSequence(geometry, tuple(variables), data.astype(np.float64))


def write_mask(mask: np.ndarray, geometry: GridGeometry, path, name: str = "tc_mask") -> None:
    write_field(FieldSequence(geometry, (name,), np.asarray(mask, dtype=float)[:, None]), path)


def read_mask(path) -> tuple[np.ndarray, GridGeometry]:
    f = read_field(path)
    if len(f.variables) != 1:
        raise SchemaError("mask files hold exactly one variable")
    return f.data[:, 0].copy(), f.geometry
