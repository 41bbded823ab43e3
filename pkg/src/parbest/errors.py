"""Exception types shared across the package."""


class ParbestError(Exception):
    """Base class for all package errors."""


class ContractError(ParbestError):
    """An argument violates an operation's preconditions."""


class InvariantError(ParbestError):
    """A data structure no longer satisfies its invariants."""


class ConfigError(ParbestError):
    """An experiment or policy configuration is inconsistent."""


class DefinitenessError(ParbestError):
    """A matrix required to be positive definite is not."""


class BracketError(ParbestError):
    """A scalar root bracket does not straddle the target."""


class SolverError(ParbestError):
    """An inner solver failed; carries diagnostic context."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics
