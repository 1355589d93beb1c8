"""Entropy-guided knowledge distillation for small autoregressive transformers."""

from .errors import (
    ConfigError,
    DependencyError,
    EgadError,
    IngestionError,
    InputError,
    NumericalError,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DependencyError",
    "EgadError",
    "IngestionError",
    "InputError",
    "NumericalError",
    "__version__",
]
