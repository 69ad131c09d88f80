import sys

import pytest

from stormsteer.detector import detect_fields
from stormsteer.fields import compute_stats, derive_inputs
from stormsteer.geo import GeoPoint, GridGeometry
from stormsteer.surrogate import SurrogateModel
from stormsteer.synth import ScenarioSpec, VortexSpec, synth_scenario


@pytest.fixture(scope="session")
def small_scenario():
    """A 20 x 32 regional grid with one detected westward vortex."""
    g = GridGeometry(20, 32, 5.0, 140.0, 1.0)
    v = VortexSpec(GeoPoint(13.0, 163.0), 285.0, 100.0, lifetime_steps=12)
    f, truth = synth_scenario(ScenarioSpec(g, T=12, vortices=(v,), seed=4))
    mask, tracks = detect_fields(f)
    assert len(tracks) == 1
    return f, mask, tracks


@pytest.fixture(scope="session")
def small_model(small_scenario):
    f = small_scenario[0]
    m = SurrogateModel.init(4, seed=3, final_bias=-2.0, dilations=(1, 2, 2))
    m.field_stats = compute_stats(f)
    m.input_stats = compute_stats(derive_inputs(f).as_fields())
    return m


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
