"""Exception hierarchy shared by every module.

Each class maps to one CLI exit status (see ``freqadapt.cli``).
"""


class FreqAdaptError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(FreqAdaptError, ValueError):
    """Invalid configuration value or unsupported request."""

    exit_code = 1


class DimensionError(FreqAdaptError, ValueError):
    """Array shapes that do not fit together."""

    exit_code = 1


class FormatError(FreqAdaptError, IOError):
    """Unreadable or malformed file.

    ``code`` is a short machine-readable reason such as ``bad_magic``,
    ``bad_version``, ``bad_dtype`` or ``truncated``.
    """

    exit_code = 2

    def __init__(self, message, code="format", path=None):
        super().__init__(message)
        self.code = code
        self.path = path


class DivergenceError(FreqAdaptError, ArithmeticError):
    """A loss or gradient became non-finite.

    ``epoch`` and ``param`` locate the failure when known.
    """

    exit_code = 3

    def __init__(self, message, epoch=None, param=None):
        super().__init__(message)
        self.epoch = epoch
        self.param = param
