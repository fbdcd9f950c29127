"""Dense-array primitives with hand-written backward passes.

Real tensors are ``float64`` numpy arrays and complex tensors are
``complex128`` arrays. Every differentiable op comes as a pair: a forward
function and a ``*_backward`` function that maps the upstream gradient to
gradients for each input. Adapters compose these pairs explicitly; there is
no tape.

Convolutions use the cross-correlation orientation (no kernel flip) with
zero "same" padding.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Iterator

import numpy as np
from scipy.special import erf

from freqadapt.errors import ConfigError, DimensionError

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def as_real(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def complex_to_stacked(z: np.ndarray, axis: int = 0) -> np.ndarray:
    """Concatenate real and imaginary parts along ``axis`` (doubling it)."""
    z = np.asarray(z, dtype=np.complex128)
    return np.concatenate([z.real, z.imag], axis=axis)


def stacked_to_complex(s: np.ndarray, axis: int = 0) -> np.ndarray:
    """Inverse of :func:`complex_to_stacked`."""
    s = as_real(s)
    if s.shape[axis] % 2:
        raise DimensionError(f"stacked axis {axis} of shape {s.shape} has odd length")
    re, im = np.split(s, 2, axis=axis)
    out = np.empty(re.shape, dtype=np.complex128)
    out.real = re
    out.imag = im
    return out


# -- parameters ---------------------------------------------------------------


class ParamSet:
    """Ordered name -> (value, grad) store.

    Values are owned by the set; optimizers update them in place. Gradients
    accumulate with :meth:`accumulate` and are reset by :meth:`zero_grads`.
    """

    def __init__(self):
        self._values: OrderedDict[str, np.ndarray] = OrderedDict()
        self._grads: OrderedDict[str, np.ndarray] = OrderedDict()

    def add(self, name: str, value) -> np.ndarray:
        if name in self._values:
            raise ConfigError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=np.float64)
        self._values[name] = value
        self._grads[name] = np.zeros_like(value)
        return value

    def __contains__(self, name) -> bool:
        return name in self._values

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __setitem__(self, name: str, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        if name not in self._values:
            self.add(name, value)
            return
        if value.shape != self._values[name].shape:
            raise DimensionError(
                f"parameter {name!r}: new shape {value.shape} != {self._values[name].shape}"
            )
        self._values[name][...] = value

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def names(self) -> list[str]:
        return list(self._values)

    def items(self):
        return self._values.items()

    def grad(self, name: str) -> np.ndarray:
        return self._grads[name]

    def accumulate(self, name: str, g: np.ndarray) -> None:
        self._grads[name] += g

    def zero_grads(self) -> None:
        for g in self._grads.values():
            g[...] = 0.0

    def copy(self) -> "ParamSet":
        out = ParamSet()
        for name, value in self._values.items():
            out.add(name, value.copy())
            out._grads[name][...] = self._grads[name]
        return out

    def prefixed(self, prefix: str) -> "ParamSet":
        """Copy with every name prefixed (used when nesting sets in a checkpoint)."""
        out = ParamSet()
        for name, value in self._values.items():
            out.add(prefix + name, value.copy())
        return out

    def __repr__(self) -> str:
        shapes = ", ".join(f"{k}{tuple(v.shape)}" for k, v in self._values.items())
        return f"ParamSet({shapes})"


def param_count(params: ParamSet) -> int:
    return int(sum(v.size for _, v in params.items()))


# -- affine -------------------------------------------------------------------


def linear_apply(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``x @ w + b`` over the last axis of ``x``."""
    x, w, b = as_real(x), as_real(w), as_real(b)
    if w.ndim != 2 or x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise DimensionError(
            f"linear: x{tuple(x.shape)} incompatible with w{tuple(w.shape)}, b{tuple(b.shape)}"
        )
    return x @ w + b


def linear_backward(x: np.ndarray, w: np.ndarray, grad_out: np.ndarray):
    """Returns ``(grad_x, grad_w, grad_b)``."""
    x2 = x.reshape(-1, x.shape[-1])
    g2 = grad_out.reshape(-1, grad_out.shape[-1])
    grad_x = grad_out @ w.T
    return grad_x, x2.T @ g2, g2.sum(axis=0)


# -- activations --------------------------------------------------------------


def gelu_apply(x: np.ndarray) -> np.ndarray:
    """Exact (erf-based) Gaussian error linear unit."""
    x = as_real(x)
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return grad_out * (cdf + x * pdf)


def relu_apply(x: np.ndarray) -> np.ndarray:
    return np.maximum(as_real(x), 0.0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * (x > 0)


ACTIVATIONS = {
    "gelu": (gelu_apply, gelu_backward),
    "relu": (relu_apply, relu_backward),
}


def activation(name: str):
    """Look up an ``(apply, backward)`` pair by name."""
    try:
        return ACTIVATIONS[name.lower()]
    except KeyError:
        raise ConfigError(f"activation must be one of {sorted(ACTIVATIONS)}, got {name!r}") from None


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = as_real(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- depthwise convolution ----------------------------------------------------


def _check_conv(x, axis, kernel, channel_axis):
    axis = axis % x.ndim
    channel_axis = channel_axis % x.ndim
    if axis == channel_axis:
        raise ConfigError("convolution axis must differ from the channel axis")
    if kernel.ndim != 2:
        raise DimensionError(f"kernel must be (channels, k), got {tuple(kernel.shape)}")
    if kernel.shape[1] % 2 == 0:
        raise ConfigError(f"kernel length must be odd, got {kernel.shape[1]}")
    if kernel.shape[0] != x.shape[channel_axis]:
        raise DimensionError(
            f"kernel has {kernel.shape[0]} channels but x{tuple(x.shape)} has "
            f"{x.shape[channel_axis]} along axis {channel_axis}"
        )
    return axis, channel_axis


def _channel_view(kernel_col: np.ndarray, ndim: int) -> np.ndarray:
    # channels lead, convolution axis trails (see _to_conv_layout)
    return kernel_col.reshape((-1,) + (1,) * (ndim - 1))


def _to_conv_layout(x, axis, channel_axis):
    return np.moveaxis(x, (channel_axis, axis), (0, -1))


def _from_conv_layout(x, axis, channel_axis):
    return np.moveaxis(x, (0, -1), (channel_axis, axis))


def depthwise_conv_axis(x: np.ndarray, axis: int, kernel: np.ndarray, channel_axis: int) -> np.ndarray:
    """Per-channel 1-D cross-correlation along ``axis`` with zero 'same' padding.

    ``kernel[c]`` is applied only to channel ``c`` of ``x`` (indexed along
    ``channel_axis``): ``out[i] = sum_j kernel[c, j] * x[i + j - pad]``.
    """
    x, kernel = as_real(x), as_real(kernel)
    axis, channel_axis = _check_conv(x, axis, kernel, channel_axis)
    k = kernel.shape[1]
    pad = (k - 1) // 2
    xm = _to_conv_layout(x, axis, channel_axis)
    length = xm.shape[-1]
    widths = [(0, 0)] * (xm.ndim - 1) + [(pad, pad)]
    xp = np.pad(xm, widths)
    out = np.zeros_like(xm)
    for j in range(k):
        out += _channel_view(kernel[:, j], xm.ndim) * xp[..., j : j + length]
    return _from_conv_layout(out, axis, channel_axis)


def depthwise_conv_axis_backward(
    x: np.ndarray, axis: int, kernel: np.ndarray, channel_axis: int, grad_out: np.ndarray
):
    """Returns ``(grad_x, grad_kernel)`` for :func:`depthwise_conv_axis`."""
    x, kernel = as_real(x), as_real(kernel)
    axis, channel_axis = _check_conv(x, axis, kernel, channel_axis)
    k = kernel.shape[1]
    pad = (k - 1) // 2
    xm = _to_conv_layout(x, axis, channel_axis)
    gm = _to_conv_layout(as_real(grad_out), axis, channel_axis)
    length = xm.shape[-1]
    widths = [(0, 0)] * (xm.ndim - 1) + [(pad, pad)]
    xp = np.pad(xm, widths)
    gxp = np.zeros_like(xp)
    grad_kernel = np.empty_like(kernel)
    reduce_axes = tuple(range(1, xm.ndim))
    for j in range(k):
        gxp[..., j : j + length] += _channel_view(kernel[:, j], xm.ndim) * gm
        grad_kernel[:, j] = (gm * xp[..., j : j + length]).sum(axis=reduce_axes)
    grad_x = gxp[..., pad : pad + length]
    return _from_conv_layout(grad_x, axis, channel_axis), grad_kernel


def identity_kernel(channels: int, k: int = 3) -> np.ndarray:
    if k % 2 == 0:
        raise ConfigError(f"kernel length must be odd, got {k}")
    kern = np.zeros((channels, k))
    kern[:, k // 2] = 1.0
    return kern
