"""Synthetic MTC traffic, neural and ARIMA traffic predictors, and a benchmark harness."""
from .exceptions import (
    CampaignError,
    ConfigurationError,
    DomainError,
    MeasurementError,
    MTCBenchError,
    NumericalError,
    ShapeError,
    TrainingError,
)

__version__ = "0.1.0"

__all__ = [
    "MTCBenchError",
    "ConfigurationError",
    "DomainError",
    "ShapeError",
    "NumericalError",
    "TrainingError",
    "MeasurementError",
    "CampaignError",
]
