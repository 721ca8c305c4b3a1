"""Exception types raised across the package."""


class CastleError(Exception):
    """Base class for all package errors."""


class DimensionError(CastleError, ValueError):
    """Array shapes do not agree."""


class NumericError(CastleError, ArithmeticError):
    """A computation produced non-finite values or failed to converge."""


class DataError(CastleError, ValueError):
    """Input data is malformed (unparseable cells, bad labels, ...)."""


class MetricError(CastleError, ValueError):
    """A metric is undefined for the given inputs."""
