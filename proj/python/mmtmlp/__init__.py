"""Two-stream temporal MLP action recognition: hand-pose normalization, multi-rate
sampling, models, CPU measurement and sweeps."""

from ._core import (
    ConfigError,
    DataError,
    DimensionError,
    DivergenceError,
    Error,
    MeasurementError,
    Model,
    default_config,
    macro_f1,
    measure_cpu,
    normalize_frames,
    normalize_hand,
    pareto_front,
    quantile,
    read_results,
    run,
    sample_indices,
    sequence_length,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "DimensionError",
    "DivergenceError",
    "Error",
    "MeasurementError",
    "Model",
    "default_config",
    "macro_f1",
    "measure_cpu",
    "normalize_frames",
    "normalize_hand",
    "pareto_front",
    "quantile",
    "read_results",
    "run",
    "sample_indices",
    "sequence_length",
]
