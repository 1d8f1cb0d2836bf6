"""Contrastive continual learning on a small numpy autodiff engine."""

from . import augment, data, engine, errors, eval, losses, model, tensor
from .errors import (CoclError, ConfigError, ContractError, DegenerateInputError, DimensionError,
                     DivergenceError, DomainError, FormatError)

__all__ = [
    "augment", "data", "engine", "errors", "eval", "losses", "model", "tensor",
    "CoclError", "ConfigError", "ContractError", "DegenerateInputError", "DimensionError",
    "DivergenceError", "DomainError", "FormatError",
]
__version__ = "0.1.0"
