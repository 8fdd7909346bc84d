import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gtd import numerics as nx
from gtd.errors import ConfigError, ShapeError
from gtd.gtan import (
    GtanConfig,
    assemble_input,
    gta_block,
    gtan_forward,
    init_params,
    param_count,
    param_shapes,
    sinusoidal_step_embedding,
    zero_params,
)


def small(**kw):
    base = dict(num_classes=5, feature_dim=3, stages=3, layers_per_stage=3, channels=6, dropout_rate=0.0)
    return GtanConfig(**{**base, **kw})


def inputs(cfg, n, rng, batch=None):
    lead = (n,) if batch is None else (batch, n)
    return (
        rng.normal(size=lead + (cfg.num_classes,)),
        rng.normal(size=lead + (cfg.num_classes,)),
        rng.normal(size=lead + (cfg.feature_dim,)),
    )


def test_config_defaults_and_validation():
    cfg = GtanConfig(num_classes=48, feature_dim=64)
    assert (cfg.stages, cfg.layers_per_stage, cfg.channels, cfg.kernel_size) == (5, 9, 64, 3)
    assert cfg.dropout_rate == 0.5 and cfg.step_dim == 64
    assert cfg.input_dim == 160
    for bad in [dict(stages=0), dict(layers_per_stage=0), dict(kernel_size=2), dict(num_classes=1),
                dict(feature_dim=0), dict(gating_mode="nope"), dict(embed_dim=5)]:
        with pytest.raises(ConfigError):
            GtanConfig(**{**dict(num_classes=3, feature_dim=2), **bad})


def test_param_count_pure_function_of_config():
    cfg = small()
    a = init_params(cfg, np.random.default_rng(0))
    b = init_params(cfg, np.random.default_rng(1))
    assert {k: v.shape for k, v in a.items()} == {k: v.shape for k, v in b.items()} == param_shapes(cfg)
    assert param_count(cfg) == sum(v.size for v in a.values())
    fo = small(gating_mode="feature_only")
    assert not any("gate" in k for k in param_shapes(fo))
    assert param_count(fo) < param_count(cfg)


def test_step_embedding_examples():
    np.testing.assert_array_equal(sinusoidal_step_embedding(0, 4), [0.0, 0.0, 1.0, 1.0])
    np.testing.assert_allclose(sinusoidal_step_embedding(1, 2), [np.sin(1.0), np.cos(1.0)], rtol=1e-15)
    np.testing.assert_allclose(sinusoidal_step_embedding(1, 2), [0.84147, 0.54030], atol=1e-5)
    with pytest.raises(ShapeError):
        sinusoidal_step_embedding(3, 5)


@given(t=st.integers(0, 10**6), half=st.integers(1, 64))
def test_step_embedding_range(t, half):
    e = sinusoidal_step_embedding(t, 2 * half)
    assert e.shape == (2 * half,)
    assert np.all(np.abs(e) <= 1.0)


def test_step_embedding_batched_matches_scalar():
    ts = np.array([0, 5, 999])
    batched = sinusoidal_step_embedding(ts, 8)
    for i, t in enumerate(ts):
        np.testing.assert_array_equal(batched[i], sinusoidal_step_embedding(t, 8))


def test_assemble_input_examples():
    out = assemble_input(np.array([[1.0, 2.0]]), np.zeros((1, 2)), np.array([[5.0]])).data
    np.testing.assert_array_equal(out, [[1.0, 2.0, 0.0, 0.0, 5.0]])
    rng = np.random.default_rng(0)
    y, _, f = inputs(small(), 7, rng)
    a = assemble_input(y, np.zeros_like(y), f).data
    np.testing.assert_array_equal(a[:, :5], y)
    np.testing.assert_array_equal(a[:, 10:], f)
    assert a.shape[1] == small().input_dim
    with pytest.raises(ShapeError):
        assemble_input(y, np.zeros_like(y), f[:-1])


def _block_params(rng, ch, k=3, zero=False):
    mk = (lambda *s: np.zeros(s)) if zero else (lambda *s: rng.normal(size=s) * 0.5)
    return {"feat.w": mk(ch, ch, k), "feat.b": mk(ch), "gate.w": mk(ch, ch, k), "gate.b": mk(ch),
            "out.w": mk(ch, ch), "out.b": mk(ch)}


def test_gta_block_zero_params_is_identity():
    rng = np.random.default_rng(0)
    h = rng.normal(size=(4, 11))
    out, gate = gta_block(nx.Tensor(h), 2, _block_params(rng, 4, zero=True))
    np.testing.assert_array_equal(out.data, h)
    np.testing.assert_array_equal(gate, np.full((4, 11), 0.5))


def test_gta_block_zero_gate_halves_feature():
    rng = np.random.default_rng(1)
    ch = 4
    h = rng.normal(size=(ch, 9))
    p = _block_params(rng, ch)
    p["gate.w"][:] = 0.0
    p["gate.b"][:] = 0.0
    # identity 1x1 conv and a large bias keep ReLU in its linear part
    p["out.w"] = np.eye(ch)
    p["out.b"] = np.full(ch, 100.0)
    out, _ = gta_block(nx.Tensor(h), 1, p)
    feat = nx.conv1d_dilated(h, p["feat.w"], p["feat.b"], 2).data
    np.testing.assert_allclose(out.data - h - 100.0, 0.5 * feat, atol=1e-12)


def test_saturated_gate_matches_feature_only():
    rng = np.random.default_rng(2)
    h = rng.normal(size=(5, 13))
    p = _block_params(rng, 5)
    p["gate.w"][:] = 0.0
    p["gate.b"][:] = 20.0
    g, _ = gta_block(nx.Tensor(h), 1, p, "gated")
    f, gate = gta_block(nx.Tensor(h), 1, p, "feature_only")
    assert gate is None
    np.testing.assert_allclose(g.data, f.data, atol=1e-6, rtol=0)


def test_undilated_gate_mode_uses_dilation_one():
    rng = np.random.default_rng(3)
    h = rng.normal(size=(3, 10))
    p = _block_params(rng, 3)
    _, gate = gta_block(nx.Tensor(h), 2, p, "gated_undilated_gate")
    expect = nx.sigmoid(nx.conv1d_dilated(h, p["gate.w"], p["gate.b"], 1)).data
    np.testing.assert_array_equal(gate, expect)
    _, gate4 = gta_block(nx.Tensor(h), 2, p, "gated")
    np.testing.assert_array_equal(gate4, nx.sigmoid(nx.conv1d_dilated(h, p["gate.w"], p["gate.b"], 4)).data)


def test_forward_shape_contract():
    cfg = small(stages=3)
    rng = np.random.default_rng(0)
    params = init_params(cfg, rng)
    y, sc, f = inputs(cfg, 32, rng)
    outs, trace = gtan_forward(y, sc, f, 17, params, cfg)
    assert len(outs) == 3 and all(o.dims == (32, 5) for o in outs)
    assert set(trace.gates) == {(s, l) for s in range(3) for l in range(3)}
    arrays = trace.to_arrays(sample=0)
    assert arrays["gate.s2.l1"].shape == (6, 32)


def test_forward_zero_params_zero_outputs():
    cfg = small()
    rng = np.random.default_rng(0)
    y, sc, f = inputs(cfg, 12, rng)
    outs, _ = gtan_forward(y, sc, f, 3, zero_params(cfg), cfg)
    for o in outs:
        assert not o.data.any()


def test_forward_length_equivariance():
    cfg = small()
    rng = np.random.default_rng(4)
    params = init_params(cfg, rng)
    y, sc, f = inputs(cfg, 20, rng)
    short, _ = gtan_forward(y[:10], sc[:10], f[:10], 5, params, cfg)
    long, _ = gtan_forward(y, sc, f, 5, params, cfg)
    assert short[-1].dims == (10, 5) and long[-1].dims == (20, 5)


def test_gate_values_strictly_inside_unit_interval():
    cfg = small()
    rng = np.random.default_rng(5)
    params = init_params(cfg, rng)
    y, sc, f = inputs(cfg, 16, rng)
    _, trace = gtan_forward(y * 3, sc, f * 3, 1, params, cfg)
    for g in trace.gates.values():
        assert np.all(g > 0.0) and np.all(g < 1.0)
    # the open interval holds while |pre-activation| stays below fp64 rounding of the logistic
    s = nx.sigmoid(np.array([-36.0, 36.0])).data
    assert 0.0 < s[0] and s[1] < 1.0


@pytest.mark.parametrize("frame", [0, 9, 20])
def test_temporal_locality(frame):
    cfg = small(stages=1, layers_per_stage=3)
    radius = cfg.receptive_radius
    assert radius == 1 + 2 + 4
    rng = np.random.default_rng(6)
    params = init_params(cfg, rng)
    y, sc, f = inputs(cfg, 30, rng)
    base = gtan_forward(y, sc, f, 9, params, cfg)[0][0].data
    f2 = f.copy()
    f2[frame] += 3.0
    moved = gtan_forward(y, sc, f2, 9, params, cfg)[0][0].data
    changed = np.nonzero(np.any(base != moved, axis=1))[0]
    assert changed.size > 0
    assert np.all(np.abs(changed - frame) <= radius)
    far = np.abs(np.arange(30) - frame) > radius
    np.testing.assert_array_equal(base[far], moved[far])


def test_batched_forward_matches_unbatched_and_mask_isolates_padding():
    cfg = small(stages=2)
    rng = np.random.default_rng(7)
    params = init_params(cfg, rng)
    y, sc, f = inputs(cfg, 14, rng, batch=2)
    mask = np.ones((2, 14))
    mask[1, 10:] = 0.0
    y[1, 10:] = sc[1, 10:] = f[1, 10:] = 0.0
    outs, _ = gtan_forward(y, sc, f, np.array([4, 8]), params, cfg, mask=mask)
    solo0, _ = gtan_forward(y[0], sc[0], f[0], 4, params, cfg)
    solo1, _ = gtan_forward(y[1, :10], sc[1, :10], f[1, :10], 8, params, cfg)
    np.testing.assert_allclose(outs[-1].data[0], solo0[-1].data, atol=1e-12)
    np.testing.assert_allclose(outs[-1].data[1, :10], solo1[-1].data, atol=1e-12)


def test_step_embedding_reaches_every_stage():
    cfg = small(stages=2)
    rng = np.random.default_rng(8)
    params = init_params(cfg, rng)
    y, sc, f = inputs(cfg, 8, rng)
    a, _ = gtan_forward(y, sc, f, 1, params, cfg)
    b, _ = gtan_forward(y, sc, f, 500, params, cfg)
    assert not np.allclose(a[0].data, b[0].data)
    c, _ = gtan_forward(y, sc, f, 1, params, cfg, use_step=False)
    d, _ = gtan_forward(y, sc, f, 500, params, cfg, use_step=False)
    np.testing.assert_array_equal(c[-1].data, d[-1].data)


def test_dropout_only_in_training():
    cfg = small(dropout_rate=0.5)
    rng = np.random.default_rng(9)
    params = init_params(cfg, rng)
    y, sc, f = inputs(cfg, 8, rng)
    ev1, _ = gtan_forward(y, sc, f, 2, params, cfg, train=False, rng=np.random.default_rng(0))
    ev2, _ = gtan_forward(y, sc, f, 2, params, cfg, train=False, rng=np.random.default_rng(1))
    np.testing.assert_array_equal(ev1[-1].data, ev2[-1].data)
    tr1, _ = gtan_forward(y, sc, f, 2, params, cfg, train=True, rng=np.random.default_rng(0))
    tr2, _ = gtan_forward(y, sc, f, 2, params, cfg, train=True, rng=np.random.default_rng(1))
    assert not np.array_equal(tr1[-1].data, tr2[-1].data)


def test_forward_rejects_mismatched_inputs():
    cfg = small()
    rng = np.random.default_rng(0)
    params = init_params(cfg, rng)
    y, sc, f = inputs(cfg, 8, rng)
    with pytest.raises(ShapeError):
        gtan_forward(y[:, :4], sc[:, :4], f, 1, params, cfg)
    with pytest.raises(ShapeError):
        gtan_forward(y, sc, f[:, :2], 1, params, cfg)
