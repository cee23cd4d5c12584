"""Exception types shared across the package."""


class CQEDError(Exception):
    """Base class for all package errors."""


class DomainError(CQEDError, ValueError):
    """A physical parameter lies outside the domain of a closed-form result."""


class TruncationError(CQEDError):
    """The Fock truncation is too small for the requested coherent amplitude."""


class StabilityError(CQEDError):
    """An integration step lost trace beyond tolerance (time step too large)."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


class ConvergenceError(CQEDError):
    """A numerical solve did not produce an acceptable answer."""


class InvalidUpdate(CQEDError):
    """A Bayesian update left the Gaussian family (non-positive variance)."""


class ConfigError(CQEDError, ValueError):
    """An experiment configuration failed validation."""
