"""Exception types shared across the package."""


class PisalError(Exception):
    pass


class ConfigurationError(PisalError):
    """Invalid or incomplete configuration (missing leaf value, bad layer list, ...)."""


class UsageError(PisalError, ValueError):
    """An API was called with arguments that violate its contract."""


class DomainError(PisalError, ValueError):
    """A point or operand lies outside the domain where a quantity is defined."""


class UnsupportedOrderError(PisalError):
    pass


class NumericError(PisalError, FloatingPointError):
    """Non-finite values appeared where finite ones are required.

    Training raises this with ``model`` and ``log`` set to the last good state.
    """

    def __init__(self, message, model=None, log=None):
        super().__init__(message)
        self.model = model
        self.log = log


class PartitionDegenerateError(PisalError):
    """A loss term would average over an empty set."""


class TrainingError(PisalError):
    def __init__(self, message, model=None, log=None):
        super().__init__(message)
        self.model = model
        self.log = log


class UndefinedMetricError(PisalError, ValueError):
    """Correlation of a constant series, or percentage error against zero."""
