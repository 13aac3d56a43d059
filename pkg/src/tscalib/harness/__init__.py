"""Backtesting harness, report writer and command-line interface."""

from .backtest import BacktestResult, run_backtest, score_external
from .config import ConfigError, DatasetConfig, ExperimentConfig, ModelConfig, apply_overrides, load_config, parse_config
from .report import emit_report

__all__ = [
    "BacktestResult",
    "ConfigError",
    "DatasetConfig",
    "ExperimentConfig",
    "ModelConfig",
    "apply_overrides",
    "emit_report",
    "load_config",
    "parse_config",
    "run_backtest",
    "score_external",
]
