"""Self-contained SVG maps of trajectories on a plate carree projection.

Original tracks are drawn in blue, adversarial tracks in red (dashed), any
other role in grey. The output carries no timestamps, so rendering the same
tracks twice gives identical text.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

import numpy as np

STYLES = {
    "original": {"stroke": "#1f4fbf", "dash": None},
    "adversarial": {"stroke": "#d62020", "dash": "6,3"},
}
DEFAULT_STYLE = {"stroke": "#666666", "dash": None}


def _unwrap(lons: np.ndarray) -> np.ndarray:
    """Longitudes made continuous along a track (no 360-degree jumps)."""
    if len(lons) == 0:
        return lons
    d = (np.diff(lons) + 180.0) % 360.0 - 180.0
    return np.concatenate([[lons[0]], lons[0] + np.cumsum(d)])


def _extent(groups, pad: float):
    lats = np.concatenate([g[1][:, 0] for g in groups if len(g[1])] or [np.zeros(1)])
    lons = np.concatenate([g[1][:, 1] for g in groups if len(g[1])] or [np.zeros(1)])
    lat0, lat1 = max(lats.min() - pad, -90.0), min(lats.max() + pad, 90.0)
    lon0, lon1 = lons.min() - pad, lons.max() + pad
    return lat0, lat1, lon0, lon1


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def render_svg(track_sets, width: int = 800, pad_deg: float = 3.0, graticule_deg: float = 5.0) -> str:
    """SVG text for ``track_sets``: an iterable of (role, list of Trajectory).

    Longitudes of each track are unwrapped relative to the first track so
    dateline crossings draw as continuous lines.
    """
    groups = []
    ref = None
    for role, tracks in track_sets:
        for tr in tracks:
            ll = np.array(tr.latlon, dtype=float).reshape(-1, 2)
            if len(ll):
                ll[:, 1] = _unwrap(ll[:, 1])
                if ref is None:
                    ref = ll[0, 1]
                ll[:, 1] += 360.0 * np.round((ref - ll[0, 1]) / 360.0)
            groups.append((role, ll))
    lat0, lat1, lon0, lon1 = _extent(groups, pad_deg)
    scale = width / max(lon1 - lon0, 1e-9)
    height = max(int(math.ceil((lat1 - lat0) * scale)), 1)

    def xy(lat, lon):
        return (lon - lon0) * scale, (lat1 - lat) * scale

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>',
        '<g stroke="#dddddd" stroke-width="0.5">',
    ]
    step = graticule_deg
    for lon in np.arange(math.ceil(lon0 / step) * step, lon1 + 1e-9, step):
        x, _ = xy(lat0, lon)
        out.append(f'<line x1="{_fmt(x)}" y1="0" x2="{_fmt(x)}" y2="{height}"/>')
    for lat in np.arange(math.ceil(lat0 / step) * step, lat1 + 1e-9, step):
        _, y = xy(lat, lon0)
        out.append(f'<line x1="0" y1="{_fmt(y)}" x2="{width}" y2="{_fmt(y)}"/>')
    out.append("</g>")
    for k, (role, ll) in enumerate(groups):
        style = STYLES.get(role, DEFAULT_STYLE)
        pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in (xy(a, o) for a, o in ll))
        dash = f' stroke-dasharray="{style["dash"]}"' if style["dash"] else ""
        out.append(f'<g class="track" data-role="{escape(str(role))}" data-index="{k}">')
        if len(ll) > 1:
            out.append(f'<polyline points="{pts}" fill="none" stroke="{style["stroke"]}" stroke-width="2"{dash}/>')
        for a, o in ll:
            x, y = xy(a, o)
            out.append(f'<circle cx="{_fmt(x)}" cy="{_fmt(y)}" r="2.5" fill="{style["stroke"]}"/>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def role_of(tracks, default: str) -> str:
    """Role stored in the tracks' properties, else ``default``."""
    roles = {tr.properties.get("role") for tr in tracks} - {None}
    return roles.pop() if len(roles) == 1 else default
