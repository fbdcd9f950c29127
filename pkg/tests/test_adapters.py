import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from freqadapt import adapters
from freqadapt import numerics as nx
from freqadapt.adapters import AdapterConfig
from freqadapt.errors import ConfigError, DimensionError

from conftest import numeric_grad, rel_err

ALL = [(v, f) for v in adapters.VARIANTS for f in adapters.FUSIONS]


@given(st.sampled_from(adapters.VARIANTS), st.sampled_from(adapters.FUSIONS),
       st.sampled_from([16, 32, 64]), st.sampled_from([2, 4, 8]), st.integers(1, 12),
       st.integers(0, 2**31 - 1))
def test_zero_init_is_identity(variant, fusion, frames, width, dim, seed):
    cfg = AdapterConfig(variant=variant, dim=dim, width=width, fusion=fusion)
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, frames, 3, dim)) * 5
    y = adapters.apply(adapters.init_adapter(cfg, seed), x, cfg)
    assert np.array_equal(y, x)


def test_init_layout():
    cfg = AdapterConfig(variant="ST", dim=8, width=4)
    p = adapters.init_adapter(cfg, 0)
    assert p.names() == ["fc_down.weight", "fc_down.bias", "conv_freq", "conv_temp", "fc_up.weight", "fc_up.bias"]
    assert np.abs(p["fc_down.weight"]).max() <= np.sqrt(1 / 8)
    np.testing.assert_array_equal(p["conv_temp"], nx.identity_kernel(4))
    assert not p["fc_up.weight"].any() and not p["fc_up.bias"].any()
    ms = adapters.init_adapter(AdapterConfig(variant="MS", dim=8, width=4, fusion="gated"), 0)
    assert ms["conv_freq"].shape == (2, 3) and ms["fusion.gate"].shape == (2,)
    base = adapters.init_adapter(AdapterConfig(variant="BaselineTemporal", dim=8, width=4), 0)
    assert "conv_freq" not in base


def test_init_deterministic():
    cfg = AdapterConfig()
    a, b = adapters.init_adapter(cfg, 3), adapters.init_adapter(cfg, 3)
    for name in a:
        assert np.array_equal(a[name], b[name])


@pytest.mark.parametrize("variant,fusion", ALL)
@pytest.mark.parametrize("width", [16, 32, 64])
def test_param_count_closed_form(variant, fusion, width):
    cfg = AdapterConfig(variant=variant, dim=64, width=width, fusion=fusion)
    assert nx.param_count(adapters.init_adapter(cfg, 0)) == adapters.expected_param_count(cfg)


def test_param_count_known_values():
    # 64*16 + 16 down, two 16x3 kernels, 16*64 + 64 up
    assert adapters.expected_param_count(AdapterConfig(variant="ST", dim=64, width=16)) == 2224
    assert adapters.expected_param_count(AdapterConfig(variant="MS", dim=64, width=16)) == 2176
    assert adapters.expected_param_count(AdapterConfig(variant="BaselineTemporal", dim=64, width=16)) == 2176


@pytest.mark.parametrize("width", [8, 16, 32, 64])
def test_ms_double_width_exceeds_st(width):
    ms = adapters.expected_param_count(AdapterConfig(variant="MS", dim=64, width=2 * width))
    st_ = adapters.expected_param_count(AdapterConfig(variant="ST", dim=64, width=width))
    assert ms > st_


def _randomised(cfg, seed):
    rng = np.random.default_rng(seed)
    p = adapters.init_adapter(cfg, seed)
    for name in p:
        p[name] = p[name] + 0.5 * rng.standard_normal(p[name].shape)
    return p, rng


@pytest.mark.parametrize("variant,fusion", ALL)
def test_adapter_gradients(variant, fusion):
    cfg = AdapterConfig(variant=variant, dim=5, width=4, fusion=fusion)
    p, rng = _randomised(cfg, 7)
    x = rng.standard_normal((2, 16, 2, 5))
    g = rng.standard_normal(x.shape)

    def loss():
        return float(np.sum(adapters.apply(p, x, cfg) * g))

    p.zero_grads()
    y, cache = adapters.forward(p, x, cfg)
    gx = adapters.backward(p, cache, g)
    assert rel_err(gx, numeric_grad(loss, x)) < 1e-7
    for name in p:
        assert rel_err(p.grad(name), numeric_grad(loss, p[name])) < 1e-7, name


@pytest.mark.parametrize("variant", adapters.VARIANTS)
def test_identity_kernels_bypass_spectral_path(variant, rng):
    # with identity kernels and equal-weight fusion the temporal block is the
    # identity, so the adapter reduces to x + fc_up(act(fc_down(x)))
    cfg = AdapterConfig(variant=variant, dim=6, width=4)
    p = adapters.init_adapter(cfg, 0)
    p["fc_up.weight"] = rng.standard_normal((4, 6))
    p["fc_up.bias"] = rng.standard_normal(6)
    x = rng.standard_normal((2, 32, 3, 6))
    a = nx.gelu_apply(nx.linear_apply(x, p["fc_down.weight"], p["fc_down.bias"]))
    expected = x + nx.linear_apply(a, p["fc_up.weight"], p["fc_up.bias"])
    np.testing.assert_allclose(adapters.apply(p, x, cfg), expected, atol=1e-12)


def test_gated_fusion_at_zero_logit_equals_mean(rng):
    a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 3, 4))
    np.testing.assert_allclose(adapters.fuse(a, b, "gated", np.zeros(4)), adapters.fuse(a, b, "mean_concat"))
    np.testing.assert_allclose(adapters.fuse(a, b, "learnable", np.full(4, 0.5)), 0.5 * (a + b))


def test_concat_fusion(rng):
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((2, 5))
    np.testing.assert_array_equal(adapters.fuse(a, b, "mean_concat", mode="concat"), np.concatenate([a, b], -1))
    with pytest.raises(DimensionError):
        adapters.fuse(a, b, "mean_concat")


@pytest.mark.parametrize("strategy", ["gated", "learnable"])
def test_fuse_backward(strategy, rng):
    a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 3, 4))
    w = rng.standard_normal(4)
    g = rng.standard_normal((2, 3, 4))
    ga, gb, gw = adapters.fuse_backward(a, b, strategy, w, g)
    loss = lambda: float(np.sum(adapters.fuse(a, b, strategy, w) * g))  # noqa: E731
    assert rel_err(ga, numeric_grad(loss, a)) < 1e-8
    assert rel_err(gb, numeric_grad(loss, b)) < 1e-8
    assert rel_err(gw, numeric_grad(loss, w)) < 1e-8


def test_config_validation():
    with pytest.raises(ConfigError):
        AdapterConfig(variant="LSTM")
    with pytest.raises(ConfigError):
        AdapterConfig(variant="MS", width=15)
    with pytest.raises(ConfigError):
        AdapterConfig(fusion="max")
    with pytest.raises(ConfigError):
        AdapterConfig(placement="inside")
    with pytest.raises(ConfigError):
        AdapterConfig(n_fft=12)
    with pytest.raises(ConfigError):
        AdapterConfig.from_dict({"variant": "MS", "depth": 3})
    assert AdapterConfig.from_dict(AdapterConfig(variant="ST").to_dict()) == AdapterConfig(variant="ST")


def test_length_constraints(rng):
    cfg = AdapterConfig(variant="ST", dim=4, width=2)
    p = adapters.init_adapter(cfg, 0)
    with pytest.raises(ConfigError):
        adapters.apply(p, rng.standard_normal((1, 8, 1, 4)), AdapterConfig(variant="ST", dim=4, width=2, n_fft=8))
    ms = AdapterConfig(variant="MS", dim=4, width=2, window_scales=[16, 6])
    with pytest.raises(ConfigError):
        adapters.apply(adapters.init_adapter(ms, 0), rng.standard_normal((1, 16, 1, 4)), ms)
    with pytest.raises(DimensionError):
        adapters.apply(p, rng.standard_normal((1, 16, 1, 5)), cfg)


def test_ms_scales_default():
    assert AdapterConfig().scales(16) == [16, 8, 4]
    assert AdapterConfig(window_scales=[8, 4]).scales(16) == [8, 4]


def test_ms_frequency_filter(rng):
    # a zero conv_freq silences the spectral half of the bottleneck
    cfg = AdapterConfig(variant="MS", dim=4, width=2)
    p = adapters.init_adapter(cfg, 0)
    p["fc_up.weight"] = rng.standard_normal((2, 4))
    x = rng.standard_normal((1, 16, 1, 4))
    base = adapters.apply(p, x, cfg)
    p["conv_freq"] = np.zeros((1, 3))
    changed = adapters.apply(p, x, cfg)
    a = nx.gelu_apply(nx.linear_apply(x, p["fc_down.weight"], p["fc_down.bias"]))
    np.testing.assert_allclose(changed - base, -a[..., :1] @ p["fc_up.weight"][:1], atol=1e-12)
