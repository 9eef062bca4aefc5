"""Exception types shared across the package."""


class MoeLabError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(MoeLabError, ValueError):
    """An operation was called with out-of-range parameters (k, c, thresholds)."""


class InputError(MoeLabError, ValueError):
    """Input data violates a contract (bad score vector, shape mismatch, empty sample)."""


class ConfigError(MoeLabError):
    """Experiment configuration is invalid (schema, band coverage, placement)."""


class TraceFormatError(MoeLabError):
    """A trace file violates the on-disk format.

    ``offset`` is the byte offset at which the violation was detected,
    when meaningful (binary traces). For text traces it is a line number.
    """

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset
