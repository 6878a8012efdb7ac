"""Exception types shared across the package."""

from __future__ import annotations


class PhastError(Exception):
    """Base class for all package errors."""


class ContractViolation(PhastError, ValueError):
    """A precondition on shapes, dimensions or configuration was not met."""


class NumericFault(PhastError, ArithmeticError):
    """A non-finite or singular intermediate was produced."""

    def __init__(self, message: str, where=None):
        super().__init__(message if where is None else f"{message} (at {where})")
        self.where = where


class IntegrationFault(NumericFault):
    """An integrator produced a non-finite state or failed to converge."""


class SimulationFault(NumericFault):
    """A ground-truth simulator produced a non-finite state."""


class ControlFault(NumericFault):
    """A port estimator produced a non-finite output."""


class UnsupportedPrimitive(PhastError, TypeError):
    """An operation has no differentiation rule."""


class ConfigError(PhastError, ValueError):
    """Invalid experiment configuration."""
