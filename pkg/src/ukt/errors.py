"""Exception hierarchy shared by all ukt modules.

The CLI maps these onto exit codes: UsageError/ConfigError -> 1,
DataError (incl. ParseError) -> 2, NumericError -> 3.
"""


class UktError(Exception):
    """Base class for all errors raised by this package."""


class UsageError(UktError):
    """An API or CLI contract was violated by the caller."""


class ConfigError(UsageError):
    """A configuration value is missing, malformed, or out of range."""


class ShapeError(UktError):
    """Tensor operands have incompatible shapes for the requested op."""


class DomainError(UktError):
    """An operand value lies outside the mathematical domain of the op."""


class DataError(UktError):
    """An input dataset violates the expected format or value ranges."""


class ParseError(DataError):
    """A dataset file could not be parsed; message carries the line number."""


class NumericError(UktError):
    """A computation produced non-finite values or failed a numeric check."""
