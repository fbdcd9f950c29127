"""Fourier machinery: FFT, real FFT, Hann-windowed STFT and the video spectrum.

Conventions: the forward transform is unnormalized with a negative exponent,
``X[k] = sum_t x[t] exp(-2j*pi*k*t/n)``; the inverse divides by ``n``. All
transforms act on the last axis and broadcast over leading axes.

The STFT is centered: the signal is reflect-padded by ``n_fft // 2`` on both
sides and frames are centered at ``0, hop, ..., T``. Inversion is windowed
overlap-add divided by the summed squared window, which is exact whenever
``T`` is a multiple of ``hop``.

The ``*_backward`` functions are adjoints of the (real-linear) transforms.
Complex gradients use the ``dL/dRe + 1j * dL/dIm`` convention.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from freqadapt.errors import ConfigError, DimensionError, FormatError

ENVELOPE_FLOOR = 1e-12


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window ``0.5 * (1 - cos(2*pi*i/n))``."""
    if n < 2:
        raise ConfigError(f"Hann window needs n >= 2, got {n}")
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


# -- complex FFT --------------------------------------------------------------


@lru_cache(maxsize=64)
def _bit_reversal(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=64)
def _roots(n: int) -> np.ndarray:
    # exp(-2j*pi*j/n) for j < n, from exact angles
    angle = 2.0 * np.pi * np.arange(n) / n
    return np.cos(angle) - 1j * np.sin(angle)


def dft_naive(x, inverse: bool = False) -> np.ndarray:
    """Direct O(n^2) DFT along the last axis; the reference for :func:`fft`."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n < 1:
        raise ConfigError("DFT of an empty axis")
    k = np.arange(n)
    # reduce k*t mod n before taking the exponential to keep angles small
    table = _roots(n)[(k[:, None] * k[None, :]) % n]
    if inverse:
        return (x @ np.conj(table)) / n
    return x @ table


def fft(x) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT along the last axis.

    Lengths that are not powers of two fall back to :func:`dft_naive`.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if not is_power_of_two(n):
        return dft_naive(x)
    lead = x.shape[:-1]
    y = x[..., _bit_reversal(n)]
    roots = _roots(n)
    m = 2
    while m <= n:
        half = m // 2
        twiddle = roots[:: n // m][:half]
        y = y.reshape(lead + (n // m, m))
        even = y[..., :half]
        odd = y[..., half:] * twiddle
        y = np.concatenate([even + odd, even - odd], axis=-1)
        m *= 2
    return y.reshape(lead + (n,))


def ifft(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.complex128)
    return np.conj(fft(np.conj(X))) / X.shape[-1]


def fft_axis(x, axis: int) -> np.ndarray:
    return np.moveaxis(fft(np.moveaxis(np.asarray(x, dtype=np.complex128), axis, -1)), -1, axis)


def fftshift(x, axes=None) -> np.ndarray:
    """Rotate each axis by ``n // 2`` so the zero-frequency bin sits at the center."""
    x = np.asarray(x)
    axes = range(x.ndim) if axes is None else np.atleast_1d(axes)
    for ax in axes:
        x = np.roll(x, x.shape[ax] // 2, axis=ax)
    return x


def ifftshift(x, axes=None) -> np.ndarray:
    x = np.asarray(x)
    axes = range(x.ndim) if axes is None else np.atleast_1d(axes)
    for ax in axes:
        x = np.roll(x, -(x.shape[ax] // 2), axis=ax)
    return x


# -- real FFT -----------------------------------------------------------------


def rfft(x) -> np.ndarray:
    """Bins ``0 .. n//2`` of the FFT of a real signal."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    return fft(x)[..., : n // 2 + 1]


def irfft(X, n: int) -> np.ndarray:
    """Inverse of :func:`rfft` by Hermitian extension.

    Imaginary parts of bin 0 (and of the Nyquist bin for even ``n``) do not
    affect the result.
    """
    X = np.asarray(X, dtype=np.complex128)
    bins = n // 2 + 1
    if X.shape[-1] != bins:
        raise DimensionError(f"irfft: {X.shape[-1]} bins given, length {n} needs {bins}")
    mirror = np.conj(X[..., 1 : n - bins + 1][..., ::-1])
    full = np.concatenate([X, mirror], axis=-1)
    return ifft(full).real


def rfft_backward(grad, n: int) -> np.ndarray:
    """Adjoint of :func:`rfft` for a length-``n`` input."""
    grad = np.asarray(grad, dtype=np.complex128)
    padded = np.zeros(grad.shape[:-1] + (n,), dtype=np.complex128)
    padded[..., : grad.shape[-1]] = grad
    return n * ifft(padded).real


def _hermitian_weights(n: int) -> np.ndarray:
    weights = np.full(n // 2 + 1, 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    return weights


def irfft_backward(grad, n: int) -> np.ndarray:
    """Adjoint of :func:`irfft` (returns a complex gradient over the bins)."""
    grad = np.asarray(grad, dtype=np.float64)
    return rfft(grad) * (_hermitian_weights(n) / n)


# -- STFT ---------------------------------------------------------------------


def default_stft_params(length: int) -> tuple[int, int]:
    """``n_fft = min(32, T/2)`` and ``hop = n_fft / 4``."""
    n_fft = min(32, length // 2)
    return n_fft, max(n_fft // 4, 1)


@dataclass(frozen=True)
class SpectralFrames:
    """Complex STFT frames with shape ``(..., bins, frames)``."""

    data: np.ndarray
    n_fft: int
    hop: int
    length: int

    @property
    def bins(self) -> int:
        return self.data.shape[-2]

    @property
    def frames(self) -> int:
        return self.data.shape[-1]

    def with_data(self, data) -> "SpectralFrames":
        return SpectralFrames(np.asarray(data, dtype=np.complex128), self.n_fft, self.hop, self.length)


def _check_stft(length: int, n_fft: int, hop: int):
    if not is_power_of_two(n_fft) or n_fft < 2:
        raise ConfigError(f"n_fft must be a power of two >= 2, got {n_fft}")
    if hop < 1 or hop > n_fft:
        raise ConfigError(f"hop must be in [1, n_fft], got {hop}")
    if length < n_fft:
        raise ConfigError(f"sequence too short for window: T={length} < n_fft={n_fft}")
    if length % hop:
        raise ConfigError(f"T={length} is not divisible by hop={hop}")


@lru_cache(maxsize=64)
def _stft_plan(length: int, n_fft: int, hop: int):
    pad = n_fft // 2
    padded = length + 2 * pad
    # reflect padding without repeating the edge sample
    src = np.arange(-pad, length + pad)
    src = np.abs(src)
    src = np.where(src >= length, 2 * (length - 1) - src, src)
    scatter = np.zeros((padded, length))
    scatter[np.arange(padded), src] = 1.0
    starts = np.arange(0, length + 1, hop)
    window = hann_window(n_fft)
    envelope = np.zeros(padded)
    for s in starts:
        envelope[s : s + n_fft] += window**2
    envelope = np.maximum(envelope, ENVELOPE_FLOOR)
    return pad, scatter, starts, window, envelope


def stft(x, n_fft: int | None = None, hop: int | None = None) -> SpectralFrames:
    """Centered Hann STFT along the last axis; frames have shape ``(..., F, T')``."""
    x = np.asarray(x, dtype=np.float64)
    length = x.shape[-1]
    if n_fft is None:
        n_fft, default_hop = default_stft_params(length)
        hop = default_hop if hop is None else hop
    elif hop is None:
        hop = max(n_fft // 4, 1)
    _check_stft(length, n_fft, hop)
    pad, scatter, starts, window, _ = _stft_plan(length, n_fft, hop)
    padded = x @ scatter.T
    idx = starts[:, None] + np.arange(n_fft)[None, :]
    segments = padded[..., idx] * window
    spec = rfft(segments)
    return SpectralFrames(np.swapaxes(spec, -1, -2), n_fft, hop, length)


def istft(frames: SpectralFrames) -> np.ndarray:
    """Windowed overlap-add inverse of :func:`stft`."""
    n_fft, hop, length = frames.n_fft, frames.hop, frames.length
    _check_stft(length, n_fft, hop)
    pad, _, starts, window, envelope = _stft_plan(length, n_fft, hop)
    bins, count = n_fft // 2 + 1, len(starts)
    if frames.data.shape[-2:] != (bins, count):
        raise DimensionError(
            f"frames of shape {frames.data.shape[-2:]} inconsistent with "
            f"n_fft={n_fft}, hop={hop}, T={length} (expected {(bins, count)})"
        )
    segments = irfft(np.swapaxes(frames.data, -1, -2), n_fft) * window
    out = np.zeros(segments.shape[:-2] + (length + 2 * pad,))
    for i, s in enumerate(starts):
        out[..., s : s + n_fft] += segments[..., i, :]
    out /= envelope
    return out[..., pad : pad + length]


def stft_backward(grad, n_fft: int, hop: int, length: int) -> np.ndarray:
    """Adjoint of :func:`stft`: complex frame gradients -> real signal gradient."""
    _check_stft(length, n_fft, hop)
    pad, scatter, starts, window, _ = _stft_plan(length, n_fft, hop)
    grad = np.swapaxes(np.asarray(grad, dtype=np.complex128), -1, -2)
    segments = rfft_backward(grad, n_fft) * window
    padded = np.zeros(segments.shape[:-2] + (length + 2 * pad,))
    for i, s in enumerate(starts):
        padded[..., s : s + n_fft] += segments[..., i, :]
    return padded @ scatter


def istft_backward(grad, n_fft: int, hop: int, length: int) -> np.ndarray:
    """Adjoint of :func:`istft`: real signal gradient -> complex frame gradients."""
    _check_stft(length, n_fft, hop)
    pad, _, starts, window, envelope = _stft_plan(length, n_fft, hop)
    grad = np.asarray(grad, dtype=np.float64)
    padded = np.zeros(grad.shape[:-1] + (length + 2 * pad,))
    padded[..., pad : pad + length] = grad
    padded /= envelope
    idx = starts[:, None] + np.arange(n_fft)[None, :]
    segments = padded[..., idx] * window
    return np.swapaxes(irfft_backward(segments, n_fft), -1, -2)


# -- video spectrum -----------------------------------------------------------


@dataclass(frozen=True)
class SpectrumMap:
    """Log-compressed magnitude of the central temporal slice of a shifted 3-D spectrum."""

    values: np.ndarray
    dc_removed: bool = False
    whitened: bool = False

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def metadata(self) -> dict:
        return {
            "height": self.height,
            "width": self.width,
            "dc_removed": self.dc_removed,
            "whitened": self.whitened,
        }


def fft3d_shifted(volume) -> np.ndarray:
    """Separable 3-D FFT of an ``(H, W, T)`` volume with DC moved to the center."""
    volume = np.asarray(volume, dtype=np.float64)
    if volume.ndim != 3:
        raise DimensionError(f"volume must be rank 3 (H, W, T), got shape {volume.shape}")
    if volume.size == 0:
        raise ConfigError("empty volume")
    spec = volume.astype(np.complex128)
    for ax in range(3):
        spec = fft_axis(spec, ax)
    return fftshift(spec)


def _radius_2d(height: int, width: int) -> np.ndarray:
    rows = np.arange(height) - height // 2
    cols = np.arange(width) - width // 2
    radius = np.hypot(rows[:, None], cols[None, :])
    radius[height // 2, width // 2] = 1.0
    return radius


def spectrum_magnitude(volume, remove_dc: bool = False, whiten: bool = False) -> np.ndarray:
    """Linear (pre-log) magnitude map of the central temporal slice.

    On the central temporal slice the 3-D radial distance equals the 2-D
    spatial one, so whitening divides by the in-plane radius.
    """
    spec = fft3d_shifted(volume)
    height, width, frames = spec.shape
    mag = np.abs(spec[:, :, frames // 2])
    if remove_dc:
        mag[height // 2, width // 2] = 0.0
    if whiten:
        mag = mag / _radius_2d(height, width)
    return mag


def spectrum_map(volume, remove_dc: bool = False, whiten: bool = False) -> SpectrumMap:
    mag = spectrum_magnitude(volume, remove_dc=remove_dc, whiten=whiten)
    return SpectrumMap(np.log1p(mag), dc_removed=remove_dc, whitened=whiten)


def class_mean_spectra(volumes, labels, remove_dc: bool = False, whiten: bool = False, classes=None):
    """Per-class mean spectra; magnitudes are averaged before log compression.

    ``classes`` lists the expected class ids; ones without any volume are
    dropped with a :class:`UserWarning`.
    """
    volumes = list(volumes)
    labels = list(labels)
    if len(volumes) != len(labels):
        raise DimensionError(f"{len(volumes)} volumes but {len(labels)} labels")
    shapes = {np.shape(v) for v in volumes}
    if len(shapes) > 1:
        raise DimensionError(f"volumes must share one shape, got {sorted(shapes)}")
    wanted = sorted(set(labels)) if classes is None else list(classes)
    out = {}
    for cls in wanted:
        members = [v for v, y in zip(volumes, labels) if y == cls]
        if not members:
            warnings.warn(f"class {cls!r} has no volumes; excluded from the mean spectra", stacklevel=2)
            continue
        total = None
        for v in members:
            mag = spectrum_magnitude(v, remove_dc=remove_dc, whiten=whiten)
            total = mag if total is None else total + mag
        out[cls] = SpectrumMap(np.log1p(total / len(members)), dc_removed=remove_dc, whitened=whiten)
    return out


def write_pgm(smap: SpectrumMap, path) -> None:
    """ASCII PGM (P2), values linearly rescaled to 0..65535."""
    values = np.asarray(smap.values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        scaled = np.rint((values - lo) / (hi - lo) * 65535.0).astype(np.int64)
    else:
        scaled = np.zeros(values.shape, dtype=np.int64)
    lines = [
        "P2",
        f"# dc_removed={int(smap.dc_removed)} whitened={int(smap.whitened)}",
        f"{smap.width} {smap.height}",
        "65535",
    ]
    lines.extend(" ".join(str(v) for v in row) for row in scaled)
    Path(path).write_text("\n".join(lines) + "\n")


def read_pgm(path) -> np.ndarray:
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise FormatError(f"{path} is not an ASCII PGM", code="bad_magic", path=str(path))
    width, height, _ = (int(t) for t in tokens[1:4])
    return np.array(tokens[4:], dtype=np.int64).reshape(height, width)
