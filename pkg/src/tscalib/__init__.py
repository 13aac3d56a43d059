"""Calibration evaluation for probabilistic time-series forecasts."""

from .core import (
    DEFAULT_CONFIDENCES,
    DEFAULT_LEVELS,
    ConfidenceLevels,
    DataError,
    ForecastWindow,
    NumericError,
    QuantileForecast,
    QuantileLevels,
    TimeSeries,
    TSCalibError,
    UndefinedMetricError,
    rolling_windows,
)
from .metrics import MetricRecord, aggregate, cce, mase, msis, pce, score_window, siw, wql

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_CONFIDENCES",
    "DEFAULT_LEVELS",
    "ConfidenceLevels",
    "DataError",
    "ForecastWindow",
    "MetricRecord",
    "NumericError",
    "QuantileForecast",
    "QuantileLevels",
    "TSCalibError",
    "TimeSeries",
    "UndefinedMetricError",
    "aggregate",
    "cce",
    "mase",
    "msis",
    "pce",
    "rolling_windows",
    "score_window",
    "siw",
    "wql",
]
