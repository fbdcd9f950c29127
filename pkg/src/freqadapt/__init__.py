"""Frequency-aware temporal adapters for frozen image backbones, in plain numpy."""

from freqadapt.errors import (
    ConfigError,
    DimensionError,
    DivergenceError,
    FormatError,
    FreqAdaptError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DimensionError",
    "DivergenceError",
    "FormatError",
    "FreqAdaptError",
    "__version__",
]
