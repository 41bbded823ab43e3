"""Parallel best-response solvers for stochastic multi-agent rate optimization."""

__version__ = "0.1.0"

from .errors import (
    BracketError,
    ConfigError,
    ContractError,
    DefinitenessError,
    InvariantError,
    ParbestError,
    SolverError,
)

__all__ = [
    "BracketError",
    "ConfigError",
    "ContractError",
    "DefinitenessError",
    "InvariantError",
    "ParbestError",
    "SolverError",
    "__version__",
]
