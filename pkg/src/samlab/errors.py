"""Exception types shared across the package."""


class SamlabError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SamlabError):
    """Invalid configuration, dimensions, or violated preconditions."""


class NumericError(SamlabError):
    """Non-finite or non-convergent numerics, with optional iteration context."""

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class ContractViolationError(SamlabError):
    """An internal invariant that callers must uphold was broken."""
