import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stormsteer.fields import (
    UPSTREAM_VARIABLES, FieldSequence, MagicMismatchError, NonFiniteError, PayloadSizeError,
    SchemaError, StandardizationStats, compute_stats, derive_inputs, destandardize, read_field,
    read_mask, standardize, write_field, write_mask,
)
from stormsteer.geo import GridGeometry

G = GridGeometry(4, 6, 10.0, 120.0, 1.0)


def upstream(**over):
    base = {"msl": 101000.0, "u10": 0.0, "v10": 0.0, "z300": 91000.0, "z500": 57000.0, "surface_geopotential": 0.0}
    base.update(over)
    return FieldSequence.from_dict(G, {k: np.full((2, 4, 6), v, dtype=float) for k, v in base.items()})


def test_wind_from_components():
    assert np.all(derive_inputs(upstream(u10=3.0, v10=4.0)).wind10 == 5.0)


def test_zero_thickness():
    assert np.all(derive_inputs(upstream(z300=57000.0)).thickness == 0.0)


def test_elevation_from_geopotential():
    np.testing.assert_allclose(derive_inputs(upstream(surface_geopotential=980.665)).elevation, 100.0, rtol=0, atol=1e-12)


def test_missing_variable_is_named():
    f = FieldSequence.from_dict(G, {"msl": np.zeros((1, 4, 6))})
    with pytest.raises(KeyError, match="u10"):
        derive_inputs(f)


def test_derive_independent_of_variable_order():
    rng = np.random.default_rng(3)
    arrays = {k: rng.normal(size=(2, 4, 6)) for k in UPSTREAM_VARIABLES}
    a = derive_inputs(FieldSequence.from_dict(G, arrays))
    b = derive_inputs(FieldSequence.from_dict(G, dict(reversed(list(arrays.items())))))
    np.testing.assert_array_equal(a.stack(), b.stack())
    np.testing.assert_array_equal(a.stack(), derive_inputs(FieldSequence.from_dict(G, arrays)).stack())


def test_standardize_examples():
    f = FieldSequence.from_dict(G, {"msl": np.full((1, 4, 6), 4.0)})
    s = StandardizationStats({"msl": 0.0}, {"msl": 2.0})
    assert np.all(standardize(f, s).data == 2.0)
    s2 = StandardizationStats({"msl": 4.0}, {"msl": 3.0})
    assert np.all(standardize(f, s2).data == 0.0)
    with pytest.raises(ValueError):
        StandardizationStats({"msl": 0.0}, {"msl": 0.0})


def test_compute_stats_floors_constant_variable():
    s = compute_stats(upstream())
    assert s.std["surface_geopotential"] == 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_standardize_roundtrip_and_argmax(seed):
    rng = np.random.default_rng(seed)
    f = FieldSequence.from_dict(G, {k: rng.normal(1000.0, 50.0, (2, 4, 6)) for k in ("msl", "z500")})
    s = compute_stats(f)
    z = standardize(f, s)
    np.testing.assert_allclose(destandardize(z, s).data, f.data, rtol=1e-12)
    for k in range(2):
        for t in range(2):
            assert np.argmax(z.data[t, k]) == np.argmax(f.data[t, k])
            assert np.argmin(z.data[t, k]) == np.argmin(f.data[t, k])


def test_roundtrip_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    f = FieldSequence.from_dict(G, {k: rng.normal(size=(3, 4, 6)).astype(np.float32) for k in UPSTREAM_VARIABLES})
    p = tmp_path / "f.wfld"
    write_field(f, p)
    g = read_field(p)
    assert g.variables == f.variables and g.geometry == f.geometry
    assert g.data.astype("<f4").tobytes() == f.data.astype("<f4").tobytes()
    write_field(g, tmp_path / "g.wfld")
    assert (tmp_path / "g.wfld").read_bytes() == p.read_bytes()


def test_truncated_payload(tmp_path):
    p = tmp_path / "f.wfld"
    write_field(upstream(), p)
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(PayloadSizeError, match="payload size mismatch"):
        read_field(p)


def test_unknown_variable_rejected(tmp_path):
    p = tmp_path / "f.wfld"
    write_field(upstream(), p)
    raw = p.read_bytes().replace(b'"z300"', b'"zzzz"', 1)
    p.write_bytes(raw)
    with pytest.raises(SchemaError):
        read_field(p)


def test_magic_and_nonfinite(tmp_path):
    p = tmp_path / "f.wfld"
    p.write_bytes(b"garbage\n1234")
    with pytest.raises(MagicMismatchError):
        read_field(p)
    write_field(upstream(), p)
    raw = bytearray(p.read_bytes())
    raw[-4:] = np.array([np.nan], dtype="<f4").tobytes()
    p.write_bytes(bytes(raw))
    with pytest.raises(NonFiniteError):
        read_field(p)


def test_mask_roundtrip(tmp_path):
    m = (np.random.default_rng(1).random((2, 4, 6)) > 0.7).astype(float)
    write_mask(m, G, tmp_path / "m.wfld")
    m2, g = read_mask(tmp_path / "m.wfld")
    assert g == G and np.array_equal(m, m2)


def test_field_sequence_validation():
    with pytest.raises(ValueError):
        FieldSequence(G, ("msl",), np.full((1, 1, 4, 6), np.inf))
    with pytest.raises(ValueError):
        FieldSequence(G, ("msl", "msl"), np.zeros((1, 2, 4, 6)))
    with pytest.raises(ValueError):
        FieldSequence(G, ("bogus",), np.zeros((1, 1, 4, 6)))
