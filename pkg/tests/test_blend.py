import numpy as np
import pytest

from regionblend.blend import (BlendConfig, FeatureTap, blend, blend_branch, blend_taps,
                               run_injected_step)
from regionblend.denoiser import Prompt, TapPlan
from regionblend.errors import BlendConfigError, ShapeError, TapPlanError
from regionblend.schedule import Solver

DEFAULT = BlendConfig()


def _c(v, shape=(1, 4, 3, 3)):
    return np.full(shape, float(v))


def test_defaults():
    assert (DEFAULT.alpha, DEFAULT.beta, DEFAULT.gamma) == (0.25, 0.5, 0.25)
    assert (DEFAULT.tau_a, DEFAULT.tau_b) == (0.5, 0.8)


def test_equal_inputs_in_window():
    c = _c(0.7)
    np.testing.assert_allclose(blend(c, c, c, 30, 50, DEFAULT), c, rtol=1e-15)


def test_high_branch_is_half_sum():
    np.testing.assert_array_equal(blend(_c(2), _c(4), _c(100), 45, 50, DEFAULT), _c(3))


def test_low_branch_is_identity():
    f_e = _c(1.5)
    assert blend(f_e, _c(4), _c(9), 15, 50, DEFAULT) is f_e


def test_branch_table_t50():
    table = {t: blend_branch(t, 50, DEFAULT) for t in range(51)}
    assert all(table[t] == "high" for t in range(41, 51))
    assert all(table[t] == "window" for t in range(26, 40))
    assert all(table[t] == "identity" for t in range(0, 26))
    # both boundaries fail a strict comparison
    assert table[40] == "identity" and table[25] == "identity"


def test_swapped_convention():
    cfg = BlendConfig(average_noisy_steps=False)
    assert blend_branch(45, 50, cfg) == "identity"
    assert blend_branch(10, 50, cfg) == "high"
    assert blend_branch(30, 50, cfg) == "window"


def test_window_is_convex(rng):
    cfg = BlendConfig(alpha=0.2, beta=0.3, gamma=0.5)
    f = rng.standard_normal((3, 2, 8, 5, 5))
    out = blend(*f, 30, 50, cfg)
    assert np.all(out >= f.min(axis=0) - 1e-12) and np.all(out <= f.max(axis=0) + 1e-12)


def test_blend_linear(rng):
    a = rng.standard_normal((3, 6, 4))
    b = rng.standard_normal((3, 6, 4))
    for t in (45, 30, 10):
        lhs = blend(*(2 * a + 3 * b), t, 50, DEFAULT)
        rhs = 2 * blend(*a, t, 50, DEFAULT) + 3 * blend(*b, t, 50, DEFAULT)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


@pytest.mark.parametrize("kw", [dict(alpha=0.5), dict(alpha=-0.25, beta=1.0),
                                dict(tau_a=0.8, tau_b=0.5), dict(tau_b=1.2)])
def test_invalid_config(kw):
    with pytest.raises(BlendConfigError):
        BlendConfig(**kw)


def test_blend_errors():
    with pytest.raises(ShapeError):
        blend(_c(0), _c(0, (1, 4, 2, 2)), _c(0), 30, 50, DEFAULT)
    with pytest.raises(BlendConfigError):
        blend(_c(0), _c(0), _c(0), 51, 50, DEFAULT)


def test_feature_tap_shapes():
    with pytest.raises(ShapeError):
        FeatureTap("x", 3, _c(0), _c(0), _c(0, (2, 2)))


def test_layer_selection(model):
    assert DEFAULT.select_layers(model.decoder_layers) == model.decoder_layers
    assert BlendConfig(layers=["dec1.attn1"]).select_layers(model.decoder_layers) == ("dec1.attn1",)
    with pytest.raises(BlendConfigError):
        BlendConfig(layers=["enc1.attn"]).select_layers(model.decoder_layers)


def test_blend_taps_missing_layer(model):
    with pytest.raises(TapPlanError):
        blend_taps({}, {}, {}, 30, 50, DEFAULT, model.decoder_layers)


@pytest.fixture
def streams(model, rng, sched):
    t, t_next = 958, 938
    z_e = rng.standard_normal((1, 3, 32, 32))
    z_p = rng.standard_normal((1, 3, 32, 32))
    z_n = rng.standard_normal((1, 3, 32, 32))
    target = Prompt.from_text("blue square")
    rec = TapPlan.record()
    eps_e, taps_e = model.forward(z_e, t, target, rec)
    _, taps_p = model.forward(z_p, t, target, rec)
    _, taps_n = model.forward(z_n, t, Prompt.null(), rec)
    return dict(t=t, t_next=t_next, z_e=z_e, eps_e=eps_e, target=target,
                taps=(taps_e, taps_p, taps_n))


def test_injecting_own_features_is_plain_step(model, sched, streams):
    s = streams
    taps_e = s["taps"][0]
    plain = Solver("dpmpp2m", sched).step(s["z_e"], s["eps_e"], s["t"], s["t_next"])
    injected, _ = run_injected_step(s["z_e"], s["t"], s["t_next"], s["target"], taps_e, model,
                                    Solver("dpmpp2m", sched))
    assert np.max(np.abs(injected - plain)) < 1e-6
    # alpha = 1 in the window degenerates to the same thing
    cfg = BlendConfig(alpha=1.0, beta=0.0, gamma=0.0)
    blended = blend_taps(*s["taps"], 600, 999, cfg, model.decoder_layers)
    again, _ = run_injected_step(s["z_e"], s["t"], s["t_next"], s["target"], blended, model,
                                 Solver("dpmpp2m", sched))
    assert np.max(np.abs(again - plain)) < 1e-6


def test_beta_one_injects_text_stream(model, sched, streams):
    s = streams
    taps_e, taps_p, taps_n = s["taps"]
    cfg = BlendConfig(alpha=0.0, beta=1.0, gamma=0.0)
    blended = blend_taps(taps_e, taps_p, taps_n, 600, 999, cfg, model.decoder_layers)
    got, _ = run_injected_step(s["z_e"], s["t"], s["t_next"], s["target"], blended, model,
                               Solver("ddim", sched))
    eps, _ = model.forward(s["z_e"], s["t"], s["target"], TapPlan.override(taps_p))
    want = Solver("ddim", sched).step(s["z_e"], eps, s["t"], s["t_next"])
    assert np.max(np.abs(got - want)) < 1e-6
    plain = Solver("ddim", sched).step(s["z_e"], s["eps_e"], s["t"], s["t_next"])
    assert np.max(np.abs(got - plain)) > 1e-6


def test_injected_step_missing_blend(model, sched, streams):
    s = streams
    taps_e = s["taps"][0]
    empty = {k: FeatureTap(k, s["t"], v, v, v) for k, v in taps_e.items()}
    with pytest.raises(TapPlanError):
        run_injected_step(s["z_e"], s["t"], s["t_next"], s["target"], empty, model,
                          Solver("ddim", sched))
