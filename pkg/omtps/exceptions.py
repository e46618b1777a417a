"""
Exception types raised by omtps.

The command-line entry point maps these onto exit codes: ConfigError -> 2, NumericalError -> 3,
StaleArtifactError -> 4.
"""


class OmtpsError(Exception):
    """Base class for all errors raised deliberately by omtps."""


class ConfigError(OmtpsError, ValueError):
    """
    Invalid parameters or a configuration file violating its schema.

    Parameters
    ----------
    message : str
        Human readable description
    field : str, optional
        Name of the offending configuration field, included in the message
    """
    def __init__(self, message, field=None):
        self.field = field
        if field:
            message = f'{field}: {message}'
        super().__init__(message)


class NumericalError(OmtpsError, ArithmeticError):
    """
    A computation produced non-finite values or failed to converge.

    Parameters
    ----------
    message : str
        Human readable description
    details : dict, optional
        Diagnostics such as indices, offending coordinates or residual norms
    """
    def __init__(self, message, details=None):
        self.details = details or {}
        super().__init__(message)


class IntegrationError(NumericalError):
    """A stochastic integrator or decoder produced a non-finite or out-of-bounds state."""


class StaleArtifactError(OmtpsError):
    """An artifact on disk no longer matches the digest recorded by the run that produced it."""


class UnsupportedOperationError(OmtpsError, NotImplementedError):
    """A drift field lacks a requested capability, e.g. an analytic divergence."""


class UnreachableError(OmtpsError, ValueError):
    """A bridge was requested between states that cannot be connected in the given length."""


class InvalidPathError(OmtpsError, ValueError):
    """A discrete path contains a transition with zero probability under the model."""
