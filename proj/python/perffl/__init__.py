"""Python bindings for the performative federated learning simulator."""

from ._perffl import (
    ConfigError,
    NumericError,
    RunError,
    normalize_config,
    preset_names,
    pseudo_inverse,
    reference_optimum,
    run_config,
    run_preset,
    spearman,
)

__all__ = [
    "ConfigError",
    "NumericError",
    "RunError",
    "normalize_config",
    "preset_names",
    "pseudo_inverse",
    "reference_optimum",
    "run_config",
    "run_preset",
    "spearman",
]
