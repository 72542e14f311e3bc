"""Exception hierarchy shared across the workbench.

The CLI maps ConfigurationError/ContractError to exit code 1 (user or
validation error) and everything else to exit code 2 (runtime failure).
"""


class ShirshakError(Exception):
    """Base class for all workbench errors."""


class ConfigurationError(ShirshakError):
    """Invalid configuration value or combination."""


class ContractError(ShirshakError):
    """A caller violated an operation's precondition (bad shape, bad id, ...)."""


class IntegrityError(ShirshakError):
    """Serialized data is corrupted or has an unknown version."""


class IngestError(ShirshakError):
    """A corpus file cannot be read, or is malformed in strict mode."""


class TrainingError(ShirshakError):
    """Training aborted (non-finite gradient, inconsistent state, ...)."""
