"""Training-free architecture search with ZEROS scoring and NTK checks."""

from ._core import (
    ConfigError,
    Error,
    NumericError,
    ParseError,
    SearchAborted,
    ShapeError,
    StateError,
    canonical_genotype,
    config_digest,
    enumerate_space,
    ntk,
    search,
    sensitivity_sweep,
    space_size,
    width_scaling,
    zeros_scores,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "Error",
    "NumericError",
    "ParseError",
    "SearchAborted",
    "ShapeError",
    "StateError",
    "canonical_genotype",
    "config_digest",
    "enumerate_space",
    "ntk",
    "search",
    "sensitivity_sweep",
    "space_size",
    "width_scaling",
    "zeros_scores",
]
