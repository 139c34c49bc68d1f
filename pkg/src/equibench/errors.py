"""Exception hierarchy shared by every equibench module."""


class EquibenchError(Exception):
    """Base class for all library errors."""


class DimensionError(EquibenchError, ValueError):
    """Array shapes or feature widths do not line up."""


class DomainError(EquibenchError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ContractError(EquibenchError, RuntimeError):
    """A caller violated a usage contract (wrong state, wrong pairing)."""


class ConfigError(EquibenchError, ValueError):
    """Invalid configuration; ``field`` names the offending key path."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class NumericalError(EquibenchError, ArithmeticError):
    """Non-finite values appeared during training."""
