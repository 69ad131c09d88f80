import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stormsteer.geo import (
    EARTH_RADIUS_KM, GeoPoint, GridGeometry, bearing_of_planar_vector, central_angle,
    cosine_law_angle, destination_point, great_circle_deg, normalize_lon,
)
import mpmath as mp


def oracle_cos_law_deg(a, b):
    """High-precision law-of-cosines central angle in degrees."""
    mp.mp.dps = 50
    la, oa, lb, ob = (mp.radians(mp.mpf(v)) for v in (a.lat, a.lon, b.lat, b.lon))
    c = mp.sin(la) * mp.sin(lb) + mp.cos(la) * mp.cos(lb) * mp.cos(ob - oa)
    c = max(min(c, 1), -1)
    return float(mp.degrees(mp.acos(c)))


def test_identity_distance():
    assert great_circle_deg(GeoPoint(10, 20), GeoPoint(10, 20)) == 0.0


def test_quarter_and_antipode():
    assert great_circle_deg(GeoPoint(0, 0), GeoPoint(0, 90)) == oracle_cos_law_deg(GeoPoint(0, 0), GeoPoint(0, 90)) == 90.0
    assert great_circle_deg(GeoPoint(0, 0), GeoPoint(0, 180)) == 180.0


def test_destination_examples():
    d = math.pi / 180 * 6371
    east = destination_point(GeoPoint(0, 0), 90, d, 6371)
    assert east.lat == pytest.approx(0.0, abs=1e-12) and east.lon == pytest.approx(1.0, abs=1e-12)
    north = destination_point(GeoPoint(0, 0), 0, d, 6371)
    assert north.lat == pytest.approx(1.0, abs=1e-12) and north.lon == pytest.approx(0.0, abs=1e-12)
    start = GeoPoint(12.5, 301.0)
    assert destination_point(start, 45, 0.0) == start


def test_destination_rejects_bad_inputs():
    with pytest.raises(ValueError):
        destination_point(GeoPoint(0, 0), 0, -1.0)
    with pytest.raises(ValueError):
        destination_point(GeoPoint(0, 0), 0, 1.0, 0.0)


@pytest.mark.parametrize("u,b", [((0, 1), 0.0), ((1, 0), 90.0), ((1, 1), 45.0), ((0, -1), 180.0), ((-1, 0), 270.0)])
def test_bearing_of_planar_vector(u, b):
    assert bearing_of_planar_vector(u) == pytest.approx(b, abs=1e-12)


def test_bearing_degenerate():
    with pytest.raises(ValueError, match="degenerate direction"):
        bearing_of_planar_vector((0.0, 0.0))


def test_geopoint_validation_and_normalization():
    assert GeoPoint(0, -10).lon == 350.0
    assert GeoPoint(0, 360).lon == 0.0
    with pytest.raises(ValueError):
        GeoPoint(91, 0)
    assert normalize_lon(-180.0) == 180.0


def test_stable_form_matches_cosine_law_away_from_tiny_angles():
    rng = np.random.default_rng(0)
    lat1, lat2 = rng.uniform(-80, 80, (2, 1000))
    lon1, lon2 = rng.uniform(0, 360, (2, 1000))
    np.testing.assert_allclose(central_angle(lat1, lon1, lat2, lon2), cosine_law_angle(lat1, lon1, lat2, lon2), atol=1e-7)


def roundtrip_errors(n, seed):
    rng = np.random.default_rng(seed)
    errs = []
    for _ in range(n):
        s = GeoPoint(rng.uniform(-80, 80), rng.uniform(0, 360))
        d = rng.uniform(1e-3, 5000.0)
        e = destination_point(s, rng.uniform(0, 360), d)
        back = math.radians(great_circle_deg(s, e)) * EARTH_RADIUS_KM
        errs.append(abs(back - d) / d)
    return np.array(errs)


def test_roundtrip_property_many_cases():
    assert roundtrip_errors(2000, 1).max() < 1e-9


@settings(max_examples=200, deadline=None)
@given(st.floats(-85, 85), st.floats(0, 359.99), st.floats(-85, 85), st.floats(0, 359.99))
def test_symmetry_exact(a1, o1, a2, o2):
    a, b = GeoPoint(a1, o1), GeoPoint(a2, o2)
    assert great_circle_deg(a, b) == great_circle_deg(b, a)
    assert 0.0 <= great_circle_deg(a, b) <= 180.0


@settings(max_examples=200, deadline=None)
@given(*[st.floats(-89, 89), st.floats(0, 359.99)] * 3)
def test_triangle_inequality(a1, o1, a2, o2, a3, o3):
    a, b, c = GeoPoint(a1, o1), GeoPoint(a2, o2), GeoPoint(a3, o3)
    assert great_circle_deg(a, c) <= great_circle_deg(a, b) + great_circle_deg(b, c) + 1e-9


@settings(max_examples=100, deadline=None)
@given(st.floats(-60, 60), st.floats(0, 359.9))
def test_agrees_with_high_precision_oracle(lat, lon):
    a, b = GeoPoint(lat, lon), GeoPoint(-lat / 2, lon + 37.0)
    assert great_circle_deg(a, b) == pytest.approx(oracle_cos_law_deg(a, b), abs=1e-9)


def test_grid_geometry_roundtrip_and_bounds():
    g = GridGeometry(60, 360, -29.5, 0.0, 1.0)
    assert g.is_global
    for i in (0, 17, 59):
        for j in (0, 123, 359):
            assert g.nearest_index(g.lat_of_row(i), g.lon_of_col(j)) == (i, j)
    assert g.nearest_index(0.0, 359.8) == (30 if g.lat_of_row(30) == 0.5 else g.nearest_index(0.0, 0.0)[0], 0)
    r = GridGeometry(24, 48, 5.0, 130.0, 1.0)
    assert not r.is_global
    with pytest.raises(ValueError):
        r.nearest_index(10.0, 200.0)
    assert GridGeometry.from_dict(r.to_dict()) == r
    assert np.all(np.diff(r.lats) > 0)
