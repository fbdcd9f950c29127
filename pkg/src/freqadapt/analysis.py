"""Frequency discriminability of temporal embeddings.

Each clip's embedding sequence is reduced to a power spectrum over temporal
bins (mean over embedding dimensions of ``|rfft_t|^2``). Per bin, a one-way
ANOVA-style ratio of between-class to within-class sums of squares measures
how well that band separates the classes; the ratios are normalized to sum
to one over bins.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from freqadapt import spectral
from freqadapt.errors import ConfigError, DimensionError, FormatError

DEFAULT_EPSILON = 1e-8
MID_BAND = range(1, 6)
POOLINGS = ("mean", "cls")


def band_label(bin_index: int, mid: range = MID_BAND) -> str:
    if bin_index == 0:
        return "DC"
    if bin_index in mid:
        return "mid"
    return "high" if bin_index >= mid.stop else "low"


def bin_to_hz(bin_index: int, frames: int, fps: float) -> float:
    """Center frequency of a temporal FFT bin for ``frames`` samples at ``fps``."""
    return bin_index * fps / frames


def parse_band(text: str) -> range:
    """``"1-5"`` -> ``range(1, 6)`` (inclusive bounds); ``"3"`` -> ``range(3, 4)``."""
    try:
        if "-" in text:
            lo, hi = (int(part) for part in text.split("-", 1))
        else:
            lo = hi = int(text)
    except ValueError:
        raise ConfigError(f"band must look like '1-5', got {text!r}") from None
    return range(lo, hi + 1)


# -- spectral power -------------------------------------------------------------


def pool_tokens(x: np.ndarray, pooling: str = "mean") -> np.ndarray:
    """Collapse the token axis of ``(B, T, N, D)`` embeddings to ``(B, T, D)``."""
    if pooling == "mean":
        return x.mean(axis=2)
    if pooling == "cls":
        return x[:, :, 0, :]
    raise ConfigError(f"pooling must be one of {POOLINGS}, got {pooling!r}")


def spectral_power(x, pooling: str = "mean") -> np.ndarray:
    """``P(f) = mean_d |FFT_t x(t, d)|^2`` over bins ``0 .. T//2``.

    Accepts a single clip ``(T, D)``, a batch ``(B, T, D)`` or token
    embeddings ``(B, T, N, D)`` (tokens pooled first).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 4:
        x = pool_tokens(x, pooling)
    if x.ndim not in (2, 3):
        raise DimensionError(f"expected (T, D), (B, T, D) or (B, T, N, D), got shape {x.shape}")
    if x.shape[-2] < 2:
        raise ConfigError(f"need at least 2 frames, got T={x.shape[-2]}")
    spec = spectral.rfft(np.swapaxes(x, -1, -2))
    return (spec.real**2 + spec.imag**2).mean(axis=-2)


@dataclass
class PowerSpectrumSet:
    power: np.ndarray
    labels: np.ndarray
    frames: int | None = None
    frame_rate_hz: float | None = None

    def __post_init__(self):
        self.power = np.asarray(self.power, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.power.ndim != 2:
            raise DimensionError(f"power must be (clips, bins), got {self.power.shape}")
        if len(self.labels) != self.power.shape[0]:
            raise DimensionError(f"{self.power.shape[0]} clips but {len(self.labels)} labels")
        if np.any(self.power < 0):
            raise ConfigError("spectral power must be nonnegative")

    @property
    def bins(self) -> int:
        return self.power.shape[1]

    @classmethod
    def from_embeddings(cls, x, labels, pooling="mean", frame_rate_hz=None) -> "PowerSpectrumSet":
        x = np.asarray(x)
        return cls(spectral_power(x, pooling), labels, frames=x.shape[1], frame_rate_hz=frame_rate_hz)


# -- discriminability -----------------------------------------------------------


@dataclass
class DiscriminabilityCurve:
    values: np.ndarray
    between: np.ndarray
    within: np.ndarray
    epsilon: float
    degenerate_uniform: bool = False
    frames: int | None = None
    mid_band: range = field(default=MID_BAND)

    @property
    def bins(self) -> int:
        return len(self.values)

    @property
    def bands(self) -> list[str]:
        return [band_label(f, self.mid_band) for f in range(self.bins)]

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.values))


def discriminability(spectra: PowerSpectrumSet, epsilon: float = DEFAULT_EPSILON) -> DiscriminabilityCurve:
    """Normalized ``Between(f) / (Within(f) + epsilon)`` over temporal bins.

    Sums of squares are population sums (no degrees-of-freedom correction).
    If every ratio is zero the uniform curve is returned with
    ``degenerate_uniform`` set.
    """
    if epsilon < 0:
        raise ConfigError(f"epsilon must be nonnegative, got {epsilon}")
    classes, index = np.unique(spectra.labels, return_inverse=True)
    if len(classes) < 2:
        raise ConfigError("discriminability undefined for one class")
    # canonical clip order (class, then power values) makes every reduction
    # independent of the input order, so shuffled inputs give identical bits
    order = np.lexsort(tuple(spectra.power.T[::-1]) + (index,))
    power, index = spectra.power[order], index[order]
    counts = np.bincount(index, minlength=len(classes)).astype(np.float64)
    sums = np.zeros((len(classes), power.shape[1]))
    np.add.at(sums, index, power)
    class_mean = sums / counts[:, None]
    grand_mean = power.mean(axis=0)
    between = (counts[:, None] * (class_mean - grand_mean) ** 2).sum(axis=0)
    within = ((power - class_mean[index]) ** 2).sum(axis=0)
    denom = within + epsilon
    if np.any((denom == 0) & (between > 0)):
        raise ConfigError("zero within-class variance with epsilon=0")
    ratio = np.divide(between, denom, out=np.zeros_like(between), where=denom > 0)
    total = ratio.sum()
    if total > 0:
        values, degenerate = ratio / total, False
    else:
        values, degenerate = np.full(len(ratio), 1.0 / len(ratio)), True
    return DiscriminabilityCurve(values, between, within, float(epsilon), degenerate, spectra.frames)


def _check_band(curve: DiscriminabilityCurve, band: range) -> range:
    band = range(band.start, band.stop) if isinstance(band, range) else range(band[0], band[1] + 1)
    if len(band) == 0:
        return band
    if band.start < 0 or band.stop > curve.bins:
        raise ConfigError(f"band {band.start}..{band.stop - 1} outside bins 0..{curve.bins - 1}")
    return band


def band_mass(curve: DiscriminabilityCurve, band: range = MID_BAND) -> float:
    """Share of normalized discriminability inside ``band``.

    ``band`` is a ``range`` of bin indices or an inclusive ``(lo, hi)`` pair.
    """
    band = _check_band(curve, band)
    if len(band) == 0:
        return 0.0
    return float(curve.values[band.start : band.stop].sum())


def compare_curves(before: DiscriminabilityCurve, after: DiscriminabilityCurve, band: range = MID_BAND) -> float:
    """Signed change in band mass going from ``before`` to ``after``."""
    if before.bins != after.bins:
        raise DimensionError(f"curves have {before.bins} and {after.bins} bins")
    return band_mass(after, band) - band_mass(before, band)


def curve_summary(curve: DiscriminabilityCurve, band: range = MID_BAND) -> dict:
    return {
        "bins": curve.bins,
        "argmax_bin": curve.argmax,
        "band": [band.start, band.stop - 1],
        "band_mass": band_mass(curve, band),
        "degenerate_uniform": curve.degenerate_uniform,
        "epsilon": curve.epsilon,
    }


# -- files ----------------------------------------------------------------------

CURVE_HEADER = ["bin", "freq_hz", "d_normalized", "between", "within", "band"]


def write_curve_csv(curve: DiscriminabilityCurve, path, fps: float | None = None) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CURVE_HEADER)
        for f in range(curve.bins):
            hz = "" if fps is None or curve.frames is None else repr(bin_to_hz(f, curve.frames, fps))
            writer.writerow([f, hz, repr(float(curve.values[f])), repr(float(curve.between[f])),
                             repr(float(curve.within[f])), curve.bands[f]])


def read_curve_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_labels_csv(path, labels) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["clip_id", "label"])
        for i, y in enumerate(labels):
            writer.writerow([i, int(y)])


def read_labels_csv(path) -> np.ndarray:
    """Labels ordered by ``clip_id`` (ids must be exactly ``0 .. n-1``)."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}", code="io", path=str(path)) from exc
    if not rows or set(rows[0]) != {"clip_id", "label"}:
        raise FormatError(f"{path}: expected header clip_id,label", code="bad_header", path=str(path))
    try:
        pairs = sorted((int(r["clip_id"]), int(r["label"])) for r in rows)
    except (TypeError, ValueError):
        raise FormatError(f"{path}: non-integer clip_id or label", code="bad_row", path=str(path)) from None
    if [cid for cid, _ in pairs] != list(range(len(pairs))):
        raise FormatError(f"{path}: clip ids must be 0..{len(pairs) - 1}", code="bad_row", path=str(path))
    return np.array([y for _, y in pairs], dtype=np.int64)


# -- configuration --------------------------------------------------------------


@dataclass
class AnalysisConfig:
    epsilon: float = DEFAULT_EPSILON
    pooling: str = "mean"
    band: list[int] = field(default_factory=lambda: [MID_BAND.start, MID_BAND.stop - 1])
    fps: float | None = None
    tap: str = "post_adapter"

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigError(f"analysis.epsilon must be nonnegative, got {self.epsilon}")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"analysis.pooling must be one of {POOLINGS}, got {self.pooling!r}")
        if len(self.band) != 2 or self.band[0] > self.band[1] + 1:
            raise ConfigError(f"analysis.band must be [lo, hi], got {self.band}")
        if self.fps is not None and self.fps <= 0:
            raise ConfigError(f"analysis.fps must be positive, got {self.fps}")

    @property
    def band_range(self) -> range:
        return range(int(self.band[0]), int(self.band[1]) + 1)

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "pooling": self.pooling, "band": list(self.band),
                "fps": self.fps, "tap": self.tap}

    @classmethod
    def from_dict(cls, data) -> "AnalysisConfig":
        unknown = set(data) - {"epsilon", "pooling", "band", "fps", "tap"}
        if unknown:
            raise ConfigError(f"unknown analysis config keys: {sorted(unknown)}")
        return cls(**data)
