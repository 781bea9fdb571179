"""Exception types shared across the package."""


class FunnelNetError(Exception):
    """Base class for all funnelnet errors."""


class DimensionError(FunnelNetError):
    """Tensor or parameter shapes are incompatible."""


class InputError(FunnelNetError):
    """Caller-supplied data is invalid (bad index, empty sequence, NaN)."""


class ContractError(FunnelNetError):
    """An operation precondition was violated."""


class NumericError(FunnelNetError):
    """A non-finite value appeared where finite math was required."""


class ParseError(FunnelNetError):
    """A dataset file could not be parsed; carries the offending line number."""

    def __init__(self, message, line_number=None):
        super().__init__(message)
        self.line_number = line_number


class UndefinedMetricError(FunnelNetError):
    """A metric is undefined for the given inputs (single class, zero denominator)."""
