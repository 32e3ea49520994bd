"""Exception types shared across the package."""


class NetFPError(Exception):
    """Base class for package errors."""


class InvalidArgumentError(NetFPError, ValueError):
    """An argument violates an operation's precondition."""


class ResourceLimitError(NetFPError):
    """An exhaustive computation would exceed the enumeration cap."""


class ConstructionFailedError(NetFPError):
    """A constructed object failed post-hoc validation.

    ``condition`` names the violated condition when one is known.
    """

    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class NumericError(NetFPError, ArithmeticError):
    """A numerical routine failed to converge."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
