"""Residual bottleneck adapters over ``(B, T, N, D)`` token sequences.

Three variants share the ``fc_down -> activation -> temporal mixing -> fc_up``
shape and add their output back onto the input:

* ``ST``: centered STFT along time, depthwise kernel-3 convolutions along
  the frame axis (``conv_temp``) and the bin axis (``conv_freq``), fused,
  then inverse STFT.
* ``MS``: channels split in half. One half goes through non-overlapping
  segment FFTs at several window sizes, a shared kernel-3 convolution over
  bins and per-segment inverse FFTs, averaged over scales in the time
  domain. The other half gets a kernel-3 convolution along time. The
  halves are concatenated.
* ``BaselineTemporal``: a kernel-3 depthwise convolution along time only.

``fc_up`` starts at zero, so a freshly initialised adapter is an exact
identity. Real and imaginary STFT/FFT components are convolved as separate
channels with the same per-channel kernel and never mixed.

Every ``forward_*`` returns ``(output, cache)``; the matching ``backward``
accumulates parameter gradients into the :class:`ParamSet` and returns the
input gradient.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from typing import Any

import numpy as np

from freqadapt import numerics as nx
from freqadapt import spectral
from freqadapt.errors import ConfigError, DimensionError

KERNEL = 3
VARIANTS = ("ST", "MS", "BaselineTemporal")
PLACEMENTS = ("before_attention", "after_attention", "both")
FUSIONS = ("mean_concat", "gated", "learnable")


@dataclass
class AdapterConfig:
    variant: str = "MS"
    dim: int = 64
    width: int = 16
    n_fft: int | None = None
    hop: int | None = None
    window_scales: list[int] | None = None
    activation: str = "gelu"
    placement: str = "after_attention"
    fusion: str = "mean_concat"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"adapter.variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.placement not in PLACEMENTS:
            raise ConfigError(f"adapter.placement must be one of {PLACEMENTS}, got {self.placement!r}")
        if self.fusion not in FUSIONS:
            raise ConfigError(f"adapter.fusion must be one of {FUSIONS}, got {self.fusion!r}")
        nx.activation(self.activation)
        if not isinstance(self.dim, int) or self.dim < 1:
            raise ConfigError(f"adapter.dim must be a positive integer, got {self.dim!r}")
        if not isinstance(self.width, int) or self.width < 1:
            raise ConfigError(f"adapter.width must be a positive integer, got {self.width!r}")
        if self.variant == "MS" and self.width % 2:
            raise ConfigError(f"adapter.width must be even for MS, got {self.width}")
        if self.n_fft is not None and (not spectral.is_power_of_two(self.n_fft) or self.n_fft < 2):
            raise ConfigError(f"adapter.n_fft must be a power of two >= 2, got {self.n_fft}")
        if self.hop is not None and self.hop < 1:
            raise ConfigError(f"adapter.hop must be positive, got {self.hop}")
        if self.window_scales is not None:
            if not self.window_scales or any(int(w) < 2 for w in self.window_scales):
                raise ConfigError(f"adapter.window_scales must be >= 2, got {self.window_scales}")
            self.window_scales = [int(w) for w in self.window_scales]

    def stft_params(self, length: int) -> tuple[int, int]:
        n_fft, hop = spectral.default_stft_params(length)
        n_fft = self.n_fft or n_fft
        hop = self.hop or max(n_fft // 4, 1)
        if length < 2 * n_fft:
            raise ConfigError(f"ST adapter needs T >= 2 * n_fft, got T={length}, n_fft={n_fft}")
        if length % hop:
            raise ConfigError(f"T={length} is not divisible by hop={hop}")
        return n_fft, hop

    def scales(self, length: int) -> list[int]:
        scales = self.window_scales or [length, length // 2, length // 4]
        for w in scales:
            if w < 2 or length % w:
                raise ConfigError(f"window scale {w} must be >= 2 and divide T={length}")
        return list(scales)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AdapterConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown adapter config keys: {sorted(unknown)}")
        return cls(**data)


# -- parameters ---------------------------------------------------------------


def _conv_channels(config: AdapterConfig) -> int:
    return config.width // 2 if config.variant == "MS" else config.width


def init_adapter(config: AdapterConfig, seed: int) -> nx.ParamSet:
    """Seeded parameters: uniform ``fc_down``, identity kernels, zero ``fc_up``."""
    config.validate()
    rng = np.random.default_rng(seed)
    d, c = config.dim, config.width
    bound = np.sqrt(1.0 / d)
    params = nx.ParamSet()
    params.add("fc_down.weight", rng.uniform(-bound, bound, size=(d, c)))
    params.add("fc_down.bias", rng.uniform(-bound, bound, size=c))
    channels = _conv_channels(config)
    if config.variant in ("ST", "MS"):
        params.add("conv_freq", nx.identity_kernel(channels, KERNEL))
    params.add("conv_temp", nx.identity_kernel(channels, KERNEL))
    if config.variant != "BaselineTemporal":
        if config.fusion == "gated":
            params.add("fusion.gate", np.zeros(channels))
        elif config.fusion == "learnable":
            params.add("fusion.alpha", np.full(channels, 0.5))
    params.add("fc_up.weight", np.zeros((c, d)))
    params.add("fc_up.bias", np.zeros(d))
    return params


def expected_param_count(config: AdapterConfig) -> int:
    """Closed-form trainable-parameter count for ``config``."""
    d, c = config.dim, config.width
    count = d * c + c + c * d + d
    channels = _conv_channels(config)
    kernels = 1 if config.variant == "BaselineTemporal" else 2
    count += kernels * channels * KERNEL
    if config.variant != "BaselineTemporal" and config.fusion != "mean_concat":
        count += channels
    return count


def _check_input(params: nx.ParamSet, x: np.ndarray, config: AdapterConfig) -> np.ndarray:
    x = nx.as_real(x)
    if x.ndim != 4:
        raise DimensionError(f"adapter input must be (B, T, N, D), got shape {x.shape}")
    if x.shape[-1] != config.dim or params["fc_down.weight"].shape[0] != config.dim:
        raise DimensionError(
            f"input dim {x.shape[-1]} vs config dim {config.dim} vs "
            f"fc_down{tuple(params['fc_down.weight'].shape)}"
        )
    return x


# -- fusion -------------------------------------------------------------------


def _channel_shape(weight: np.ndarray, ndim: int, channel_axis: int) -> np.ndarray:
    shape = [1] * ndim
    shape[channel_axis] = weight.shape[0]
    return weight.reshape(shape)


def fuse(a, b, strategy: str, weight=None, *, mode: str = "sum", channel_axis: int = -1):
    """Combine two branches.

    ``mode="sum"`` (used by ST) keeps the channel count: ``mean_concat`` is the
    elementwise mean, ``gated`` is ``g*a + (1-g)*b`` with ``g = sigmoid(weight)``
    per channel, ``learnable`` is ``alpha*a + (1-alpha)*b``.

    ``mode="concat"`` (used by MS) concatenates along ``channel_axis``; the
    gated and learnable strategies reweight the two halves by ``g`` and
    ``1 - g`` first.
    """
    a, b = nx.as_real(a), nx.as_real(b)
    if strategy not in FUSIONS:
        raise ConfigError(f"fusion strategy must be one of {FUSIONS}, got {strategy!r}")
    if mode == "sum" and a.shape != b.shape:
        raise DimensionError(f"cannot fuse shapes {a.shape} and {b.shape}")
    if mode == "concat":
        other_a = a.shape[:channel_axis % a.ndim] + a.shape[channel_axis % a.ndim + 1 :]
        other_b = b.shape[:channel_axis % b.ndim] + b.shape[channel_axis % b.ndim + 1 :]
        if a.ndim != b.ndim or other_a != other_b:
            raise DimensionError(f"cannot concatenate shapes {a.shape} and {b.shape}")
    if strategy == "mean_concat":
        wa = wb = None
    else:
        if weight is None:
            raise ConfigError(f"fusion {strategy!r} needs a per-channel weight")
        gate = nx.sigmoid(weight) if strategy == "gated" else nx.as_real(weight)
        if gate.shape != (a.shape[channel_axis],):
            raise DimensionError(f"fusion weight shape {gate.shape} vs {a.shape[channel_axis]} channels")
        wa = _channel_shape(gate, a.ndim, channel_axis % a.ndim)
        wb = 1.0 - wa
    if mode == "sum":
        return 0.5 * (a + b) if wa is None else wa * a + wb * b
    if mode == "concat":
        if wa is not None:
            a, b = wa * a, wb * b
        return np.concatenate([a, b], axis=channel_axis)
    raise ConfigError(f"fusion mode must be 'sum' or 'concat', got {mode!r}")


def fuse_backward(a, b, strategy, weight, grad_out, *, mode="sum", channel_axis=-1):
    """Returns ``(grad_a, grad_b, grad_weight)``; ``grad_weight`` is None for mean_concat."""
    axis = channel_axis % a.ndim
    if mode == "concat":
        ga, gb = np.split(grad_out, [a.shape[axis]], axis=axis)
    else:
        ga = gb = grad_out
    if strategy == "mean_concat":
        if mode == "sum":
            return 0.5 * ga, 0.5 * gb, None
        return ga, gb, None
    gate = nx.sigmoid(weight) if strategy == "gated" else nx.as_real(weight)
    wa = _channel_shape(gate, a.ndim, axis)
    reduce = tuple(i for i in range(a.ndim) if i != axis)
    dgate = (ga * a - gb * b).sum(axis=reduce)
    if strategy == "gated":
        dgate = dgate * gate * (1.0 - gate)
    return wa * ga, (1.0 - wa) * gb, dgate


def _fusion_weight(params, config):
    if config.fusion == "gated":
        return params["fusion.gate"]
    if config.fusion == "learnable":
        return params["fusion.alpha"]
    return None


def _fusion_name(config):
    return {"gated": "fusion.gate", "learnable": "fusion.alpha"}.get(config.fusion)


# -- shared bottleneck pieces ---------------------------------------------------


def _down(params, x, config):
    act, _ = nx.activation(config.activation)
    h = nx.linear_apply(x, params["fc_down.weight"], params["fc_down.bias"])
    return h, act(h)


def _down_backward(params, x, h, grad_a, config):
    _, act_back = nx.activation(config.activation)
    grad_h = act_back(h, grad_a)
    gx, gw, gb = nx.linear_backward(x, params["fc_down.weight"], grad_h)
    params.accumulate("fc_down.weight", gw)
    params.accumulate("fc_down.bias", gb)
    return gx


def _up(params, x, r):
    return x + nx.linear_apply(r, params["fc_up.weight"], params["fc_up.bias"])


def _up_backward(params, r, grad_y):
    gr, gw, gb = nx.linear_backward(r, params["fc_up.weight"], grad_y)
    params.accumulate("fc_up.weight", gw)
    params.accumulate("fc_up.bias", gb)
    return gr


def _tiled(kernel):
    # same kernel for the real and the imaginary copy of each channel
    return np.concatenate([kernel, kernel], axis=0)


def _fold(grad_kernel):
    half = grad_kernel.shape[0] // 2
    return grad_kernel[:half] + grad_kernel[half:]


# -- ST -------------------------------------------------------------------------


def forward_st(params: nx.ParamSet, x, config: AdapterConfig):
    x = _check_input(params, x, config)
    length = x.shape[1]
    n_fft, hop = config.stft_params(length)
    h, a = _down(params, x, config)
    signals = a.transpose(0, 2, 3, 1)  # (B, N, C, T)
    frames = spectral.stft(signals, n_fft, hop)
    stacked = nx.complex_to_stacked(frames.data, axis=2)  # (B, N, 2C, F, T')
    kt, kf = _tiled(params["conv_temp"]), _tiled(params["conv_freq"])
    u_temp = nx.depthwise_conv_axis(stacked, 4, kt, channel_axis=2)
    u_freq = nx.depthwise_conv_axis(stacked, 3, kf, channel_axis=2)
    weight = _fusion_weight(params, config)
    tiled_weight = None if weight is None else np.concatenate([weight, weight])
    fused = fuse(u_freq, u_temp, config.fusion, tiled_weight, mode="sum", channel_axis=2)
    refined = frames.with_data(nx.stacked_to_complex(fused, axis=2))
    r = spectral.istft(refined).transpose(0, 3, 1, 2)  # (B, T, N, C)
    y = _up(params, x, r)
    cache = dict(variant="ST", config=config, x=x, h=h, stacked=stacked, u_temp=u_temp,
                 u_freq=u_freq, tiled_weight=tiled_weight, r=r, n_fft=n_fft, hop=hop)
    return y, cache


def _backward_st(params, cache, grad_y):
    config = cache["config"]
    n_fft, hop, length = cache["n_fft"], cache["hop"], cache["x"].shape[1]
    gr = _up_backward(params, cache["r"], grad_y)
    g_refined = spectral.istft_backward(gr.transpose(0, 2, 3, 1), n_fft, hop, length)
    g_fused = nx.complex_to_stacked(g_refined, axis=2)
    g_freq, g_temp, g_w = fuse_backward(
        cache["u_freq"], cache["u_temp"], config.fusion, cache["tiled_weight"], g_fused,
        mode="sum", channel_axis=2,
    )
    if g_w is not None:
        params.accumulate(_fusion_name(config), _fold(g_w[:, None])[:, 0])
    stacked = cache["stacked"]
    gs_t, gk_t = nx.depthwise_conv_axis_backward(stacked, 4, _tiled(params["conv_temp"]), 2, g_temp)
    gs_f, gk_f = nx.depthwise_conv_axis_backward(stacked, 3, _tiled(params["conv_freq"]), 2, g_freq)
    params.accumulate("conv_temp", _fold(gk_t))
    params.accumulate("conv_freq", _fold(gk_f))
    g_frames = nx.stacked_to_complex(gs_t + gs_f, axis=2)
    g_signals = spectral.stft_backward(g_frames, n_fft, hop, length)
    grad_a = g_signals.transpose(0, 3, 1, 2)
    return grad_y + _down_backward(params, cache["x"], cache["h"], grad_a, config)


# -- MS -------------------------------------------------------------------------


def forward_ms(params: nx.ParamSet, x, config: AdapterConfig):
    x = _check_input(params, x, config)
    batch, length, tokens, _ = x.shape
    scales = config.scales(length)
    half = config.width // 2
    h, a = _down(params, x, config)
    signals = a.transpose(0, 2, 3, 1)  # (B, N, C, T)
    s_freq, s_temp = signals[:, :, :half], signals[:, :, half:]
    kf = _tiled(params["conv_freq"])
    branch = np.zeros_like(s_freq)
    per_scale = []
    for w in scales:
        seg = s_freq.reshape(batch, tokens, half, length // w, w)
        stacked = nx.complex_to_stacked(spectral.rfft(seg), axis=2)  # (B, N, 2c, S, F_w)
        filtered = nx.depthwise_conv_axis(stacked, 4, kf, channel_axis=2)
        back = spectral.irfft(nx.stacked_to_complex(filtered, axis=2), w)
        branch += back.reshape(s_freq.shape)
        per_scale.append(stacked)
    branch /= len(scales)
    temporal = nx.depthwise_conv_axis(s_temp, 3, params["conv_temp"], channel_axis=2)
    weight = _fusion_weight(params, config)
    fused = fuse(branch, temporal, config.fusion, weight, mode="concat", channel_axis=2)
    r = fused.transpose(0, 3, 1, 2)
    y = _up(params, x, r)
    cache = dict(variant="MS", config=config, x=x, h=h, scales=scales, per_scale=per_scale,
                 s_temp=s_temp, branch=branch, temporal=temporal, r=r)
    return y, cache


def _backward_ms(params, cache, grad_y):
    config = cache["config"]
    x = cache["x"]
    batch, length, tokens, _ = x.shape
    half = config.width // 2
    gr = _up_backward(params, cache["r"], grad_y)
    g_fused = gr.transpose(0, 2, 3, 1)
    weight = _fusion_weight(params, config)
    g_branch, g_temporal, g_w = fuse_backward(
        cache["branch"], cache["temporal"], config.fusion, weight, g_fused,
        mode="concat", channel_axis=2,
    )
    if g_w is not None:
        params.accumulate(_fusion_name(config), g_w)
    g_s_temp, gk_t = nx.depthwise_conv_axis_backward(
        cache["s_temp"], 3, params["conv_temp"], 2, g_temporal
    )
    params.accumulate("conv_temp", gk_t)
    kf = _tiled(params["conv_freq"])
    g_s_freq = np.zeros_like(g_branch)
    g_branch = g_branch / len(cache["scales"])
    gk_f = np.zeros_like(kf)
    for w, stacked in zip(cache["scales"], cache["per_scale"]):
        g_back = g_branch.reshape(batch, tokens, half, length // w, w)
        g_filtered = nx.complex_to_stacked(spectral.irfft_backward(g_back, w), axis=2)
        g_stacked, gk = nx.depthwise_conv_axis_backward(stacked, 4, kf, 2, g_filtered)
        gk_f += gk
        g_seg = spectral.rfft_backward(nx.stacked_to_complex(g_stacked, axis=2), w)
        g_s_freq += g_seg.reshape(g_s_freq.shape)
    params.accumulate("conv_freq", _fold(gk_f))
    g_signals = np.concatenate([g_s_freq, g_s_temp], axis=2)
    grad_a = g_signals.transpose(0, 3, 1, 2)
    return grad_y + _down_backward(params, x, cache["h"], grad_a, config)


# -- baseline -------------------------------------------------------------------


def forward_baseline(params: nx.ParamSet, x, config: AdapterConfig):
    x = _check_input(params, x, config)
    h, a = _down(params, x, config)
    r = nx.depthwise_conv_axis(a, 1, params["conv_temp"], channel_axis=3)
    y = _up(params, x, r)
    return y, dict(variant="BaselineTemporal", config=config, x=x, h=h, a=a, r=r)


def _backward_baseline(params, cache, grad_y):
    config = cache["config"]
    gr = _up_backward(params, cache["r"], grad_y)
    grad_a, gk = nx.depthwise_conv_axis_backward(cache["a"], 1, params["conv_temp"], 3, gr)
    params.accumulate("conv_temp", gk)
    return grad_y + _down_backward(params, cache["x"], cache["h"], grad_a, config)


# -- dispatch -------------------------------------------------------------------

_FORWARD = {"ST": forward_st, "MS": forward_ms, "BaselineTemporal": forward_baseline}
_BACKWARD = {"ST": _backward_st, "MS": _backward_ms, "BaselineTemporal": _backward_baseline}


def forward(params: nx.ParamSet, x, config: AdapterConfig):
    """Run the adapter selected by ``config.variant``; returns ``(y, cache)``."""
    return _FORWARD[config.variant](params, x, config)


def backward(params: nx.ParamSet, cache: dict, grad_y) -> np.ndarray:
    """Accumulate parameter gradients for ``cache`` and return the input gradient."""
    return _BACKWARD[cache["variant"]](params, cache, nx.as_real(grad_y))


def apply(params: nx.ParamSet, x, config: AdapterConfig) -> np.ndarray:
    return forward(params, x, config)[0]
