import math

import numpy as np
import pytest

from stormsteer.attack import (
    AttackConfig, InputChain, adv_loss, calibration_mask, cosine_step_size, distance_weights,
    optimize, prepare, regularizer, run_attack, run_baseline, write_trace,
)
from stormsteer.fields import derive_inputs, standardize
from stormsteer.geo import GridGeometry
from stormsteer.surrogate import focal_loss, model_inputs
from stormsteer.targetgen import make_target


def target_for(scenario):
    f, mask, tracks = scenario
    return make_target(mask, tracks, f.geometry)[0]


def test_calibration_mask_examples():
    z = np.zeros((1, 1, 3))
    assert calibration_mask(z, z, np.full(z.shape, 0.9)).sum() == 0
    zt = np.array([[[1.0, 1.0, 0.0]]])
    zo = np.array([[[0.0, 0.0, 1.0]]])
    P = np.array([[[0.9, 0.1, 0.2]]])
    assert calibration_mask(zt, zo, P).tolist() == [[[1.0, 0.0, 1.0]]]
    with pytest.raises(ValueError):
        calibration_mask(zt, zo, np.zeros((1, 1, 2)))


def test_distance_weights_examples():
    g = GridGeometry(3, 4, 0.0, 0.0, 90.0 / 2)
    z = np.zeros((2, 3, 4))
    z[0, 0, 0] = 1  # lone target at (0, 0)
    wg, wr = distance_weights(z, g, math.pi / 6, math.pi / 6)
    assert (wg[0, 0, 0], wr[0, 0, 0]) == (1.0, 0.0)
    # cell (0, 2) sits at lon 90, a quarter circle from the target
    assert wg[0, 0, 2] == pytest.approx(math.exp(-4.5), rel=1e-12)
    assert wg[0, 0, 2] == pytest.approx(0.011109, abs=1e-6)
    assert wr[0, 0, 2] == pytest.approx(1 - math.exp(-4.5), rel=1e-12)
    assert np.all(wg[1] == 1.0) and np.all(wr[1] == 0.0)
    assert np.all((wg >= 0) & (wg <= 1) & (wr >= 0) & (wr <= 1))


def test_regularizer_scalar():
    y = np.zeros((1, 2, 1, 1))
    y2 = y.copy()
    y2[0, 1, 0, 0] = 0.5
    assert regularizer(y, y2, np.ones((1, 1, 1)), 2.0, 1) == pytest.approx(0.5)


def test_adv_loss_examples():
    Z = np.zeros((1, 2, 2))
    Z[0, 0, 0] = 1
    P = np.where(Z > 0, 1 - 1e-9, 1e-9)
    y = np.zeros((1, 6, 2, 2))
    assert adv_loss(P, Z, np.zeros_like(Z), np.ones_like(Z), y, y, 0.1) < 1e-12
    # a calibrated cell uses plain cross-entropy
    P1, Z1, M1 = np.array([[[0.3]]]), np.array([[[1.0]]]), np.array([[[1.0]]])
    y1 = np.zeros((1, 6, 1, 1))
    assert adv_loss(P1, Z1, M1, np.zeros((1, 1, 1)), y1, y1, 0.1) == pytest.approx(focal_loss(P1, Z1, gamma=0.0))
    assert adv_loss(P1, Z1, M1, np.zeros((1, 1, 1)), y1, y1, 0.1) == pytest.approx(-math.log(0.3))


def test_cosine_endpoints():
    assert cosine_step_size(0.01, 0, 100) == 0.01
    assert cosine_step_size(0.01, 100, 100) == pytest.approx(0.0, abs=1e-18)
    assert cosine_step_size(0.01, 50, 100) == pytest.approx(0.005)


def test_config_validation():
    with pytest.raises(ValueError):
        AttackConfig(method="fgsm")
    with pytest.raises(ValueError):
        AttackConfig(delta=-1)
    c = AttackConfig(method="cyc-no-dilation")
    assert not c.dilated and c.weighted
    c = AttackConfig(method="cyc", use_dilation=False, use_weighting=False)
    assert not c.dilated and not c.weighted
    assert AttackConfig.from_dict(AttackConfig(eta=0.3).to_dict()) == AttackConfig(eta=0.3)
    with pytest.raises(ValueError):
        AttackConfig.from_dict({"bogus": 1})


def test_chain_gradient_finite_differences(small_scenario, small_model):
    f, mask, tracks = small_scenario
    zt = target_for(small_scenario)
    cfg = AttackConfig(lambda_reg=0.3)
    prob = prepare(f, mask, zt, small_model, cfg)
    rng = np.random.default_rng(0)
    y = prob.y0 + 0.3 * rng.normal(size=prob.y0.shape)
    y[:, 5] = prob.y0[:, 5]
    loss, g, _ = prob.loss_and_grad(small_model, y, cfg.lambda_reg)
    for _ in range(40):
        t, v, i, j = (int(rng.integers(n)) for n in y.shape)
        v = v % 5
        yp, ym = y.copy(), y.copy()
        yp[t, v, i, j] += 1e-4
        ym[t, v, i, j] -= 1e-4
        fd = (prob.loss_and_grad(small_model, yp, cfg.lambda_reg)[0] - prob.loss_and_grad(small_model, ym, cfg.lambda_reg)[0]) / 2e-4
        assert abs(fd - g[t, v, i, j]) <= 1e-4 * max(abs(fd), abs(g[t, v, i, j]), 1e-8)
    assert np.all(g[:, 5] == 0)


def test_chain_matches_derived_inputs(small_scenario, small_model):
    f = small_scenario[0]
    chain = InputChain(small_model.field_stats, small_model.input_stats)
    y0 = standardize(f, small_model.field_stats).data
    x, _ = chain.forward(y0)
    np.testing.assert_allclose(x, model_inputs(derive_inputs(f), small_model.input_stats), atol=1e-9)


@pytest.mark.parametrize("method", ["cyc", "cyc-no-dilation", "cyc-no-weighting", "ala", "taaowpf", "aowf"])
def test_clip_invariant_every_iteration(small_scenario, small_model, method):
    f, mask, _ = small_scenario
    zt = target_for(small_scenario)
    cfg = AttackConfig(eta=0.4, delta=1.0, iters=6, method=method)
    seen = []
    prob = prepare(f, mask, zt, small_model, cfg)
    optimize(prob, small_model, cfg, callback=lambda k, p: seen.append(np.max(np.abs(p))))
    assert len(seen) == 6 and max(seen) <= 1.0
    adv, trace = run_attack(f, mask, zt, small_model, cfg)
    assert trace.shape == (7, 3) and np.all(trace[:, 2] <= 1.0)
    sd = np.array([small_model.field_stats.std[v] for v in f.variables])
    diff = np.abs(adv.data - f.data) / sd[None, :, None, None]
    assert diff.max() <= 1.0 + 1e-9
    assert np.all(adv.var("surface_geopotential") == f.var("surface_geopotential"))


def test_zero_iterations_and_zero_delta_bit_exact(small_scenario, small_model):
    f, mask, _ = small_scenario
    zt = target_for(small_scenario)
    for cfg in (AttackConfig(iters=0), AttackConfig(delta=0.0, iters=5, eta=0.5)):
        adv, trace = run_attack(f, mask, zt, small_model, cfg)
        assert adv.data.tobytes() == f.data.tobytes()


def test_scalar_sanity_update():
    # one sign step from 0 with positive gradient, w_grad 1, eta 0.01
    from stormsteer.attack import AttackProblem

    class Fake:
        pass

    prob = AttackProblem.__new__(AttackProblem)
    prob.y0 = np.zeros((1, 1, 1, 1))
    prob.w_grad = np.ones((1, 1, 1))
    prob.loss_and_grad = lambda m, y, lam: (0.0, np.ones_like(y), None)
    y, trace = optimize(prob, Fake(), AttackConfig(eta=0.01, delta=10.0, iters=1, method="taaowpf"))
    assert y.item() == -0.01  # the returned array is the perturbation


def test_zero_weight_cells_never_move():
    from stormsteer.attack import AttackProblem
    prob = AttackProblem.__new__(AttackProblem)
    prob.y0 = np.zeros((1, 1, 2, 2))
    prob.w_grad = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    prob.loss_and_grad = lambda m, y, lam: (0.0, np.ones_like(y), None)
    y, _ = optimize(prob, None, AttackConfig(eta=0.1, iters=5))
    assert y[0, 0, 0, 1] == 0.0 and y[0, 0, 1, 0] == 0.0 and y[0, 0, 0, 0] < 0


def test_ala_zero_gradient_fixed_point():
    from stormsteer.attack import AttackProblem
    prob = AttackProblem.__new__(AttackProblem)
    prob.y0 = np.arange(4.0).reshape(1, 1, 2, 2)
    prob.w_grad = np.ones((1, 2, 2))
    prob.loss_and_grad = lambda m, y, lam: (1.0, np.zeros_like(y), None)
    p, _ = optimize(prob, None, AttackConfig(eta=0.1, iters=10, method="ala"))
    assert np.all(p == 0)


def test_ablation_identity(small_scenario, small_model):
    f, mask, _ = small_scenario
    zt = target_for(small_scenario)
    base = dict(eta=0.2, delta=2.0, iters=8)
    a, ta = run_attack(f, mask, zt, small_model, AttackConfig(method="taaowpf", **base))
    b, tb = run_attack(f, mask, zt, small_model, AttackConfig(method="cyc", use_dilation=False, use_weighting=False, **base))
    assert a.data.tobytes() == b.data.tobytes() and np.array_equal(ta, tb)


def test_baseline_dispatch(small_scenario, small_model):
    f, mask, _ = small_scenario
    zt = target_for(small_scenario)
    with pytest.raises(ValueError):
        run_baseline(f, mask, zt, small_model, AttackConfig(method="cyc"))
    adv, trace = run_baseline(f, mask, zt, small_model, AttackConfig(method="aowf", iters=3))
    assert trace.shape == (4, 3)


def test_nan_loss_aborts_with_trace():
    from stormsteer.attack import AttackError, AttackProblem
    prob = AttackProblem.__new__(AttackProblem)
    prob.y0 = np.zeros((1, 1, 1, 1))
    prob.w_grad = np.ones((1, 1, 1))
    calls = iter([1.0, 0.5, float("nan")])
    prob.loss_and_grad = lambda m, y, lam: (next(calls), np.ones_like(y), None)
    with pytest.raises(AttackError) as err:
        optimize(prob, None, AttackConfig(iters=5))
    assert err.value.trace.shape == (3, 3)


def test_write_trace(tmp_path):
    write_trace(np.array([[0, 1.5, 0.0], [1, 1.25, 0.01]]), tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "iteration,loss,linf" and lines[2].startswith("1,1.25,0.01")


def test_mask_shape_checked(small_scenario, small_model):
    f, mask, _ = small_scenario
    with pytest.raises(ValueError):
        run_attack(f, mask[:3], mask[:3], small_model, AttackConfig(iters=1))
