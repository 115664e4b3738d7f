"""Exception hierarchy shared across the package."""


class MTCBenchError(Exception):
    """Base class for every error raised by mtcbench."""


class ConfigurationError(MTCBenchError, ValueError):
    """Invalid parameter value or inconsistent configuration."""


class DomainError(MTCBenchError, ValueError):
    """Argument outside the mathematical domain of a function."""


class ShapeError(MTCBenchError, ValueError):
    """Array dimensions do not agree with the model or each other."""


class NumericalError(MTCBenchError, ArithmeticError):
    """Non-finite values appeared during a computation.

    ``layer`` names the component where the values were first seen.
    """

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class TrainingError(MTCBenchError, RuntimeError):
    """Training diverged; ``epoch`` is the 1-based epoch that failed."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class MeasurementError(MTCBenchError, ValueError):
    """A raw cost measurement is unusable (zero, negative or missing)."""


class CampaignError(MTCBenchError, RuntimeError):
    """Too many Monte Carlo runs failed for the campaign to be reported."""
