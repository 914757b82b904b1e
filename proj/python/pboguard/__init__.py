"""Backtest-overfitting checks for trading strategies: splits, trial matrices, PBO and the gate."""

from ._core import (
    ConfigError,
    DataError,
    binomial,
    compute_indicator,
    estimate_pbo,
    gate,
    make_combinatorial,
    make_kfold,
    make_walk_forward,
    pearson,
    run_experiment,
    sample_trials,
    write_synthetic_dataset,
)

__all__ = [
    "ConfigError",
    "DataError",
    "binomial",
    "compute_indicator",
    "estimate_pbo",
    "gate",
    "make_combinatorial",
    "make_kfold",
    "make_walk_forward",
    "pearson",
    "run_experiment",
    "sample_trials",
    "write_synthetic_dataset",
]
