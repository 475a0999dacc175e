"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class ContractError(RuntimeError):
    """A caller broke a documented precondition (e.g. missing scale)."""


class SimulationError(RuntimeError):
    """The path simulation produced a non-finite value."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class ConfigError(ValueError):
    """A run configuration failed validation."""
