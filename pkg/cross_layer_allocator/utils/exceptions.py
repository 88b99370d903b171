"""Custom exceptions for the project."""


class ConfigurationError(ValueError):
    """Raised when a scenario or solver configuration is invalid."""


class DataValidationError(ValueError):
    """Raised when numeric input validation fails."""


class UnknownModeError(DataValidationError):
    """Raised when a rate does not match any WiMedia MCS mode."""


class RateOutOfTableError(DataValidationError):
    """Raised when a requested rate lies outside [R_min, R_max]."""


class EmptyInputError(DataValidationError):
    """Raised when an SINR sequence is empty."""


class NonPositiveLambdaError(DataValidationError):
    """Raised when the EESM scaling factor is not strictly positive."""


class ZeroNoiseError(DataValidationError):
    """Raised when a subcarrier sees neither noise nor interference."""


class AllocationError(Exception):
    """Base exception for sub-band and power allocation errors."""


class InfeasibleAllocationError(AllocationError):
    """Raised when no allocation can satisfy the problem constraints."""
