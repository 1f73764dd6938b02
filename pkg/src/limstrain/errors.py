"""Exception types shared across the library.

The CLI maps these onto exit codes: configuration problems exit with 2,
solver failures with 3, oracle mismatches with 4.
"""


class LimstrainError(Exception):
    """Base class for all library errors."""


class InvalidInput(LimstrainError):
    """An argument violates a documented precondition (non-finite data, bad shape, ...)."""


class OutOfRange(LimstrainError):
    """A tensor lies outside (or too close to the boundary of) the range of the
    constitutive map.  Carries the signed distance estimate to the range boundary."""

    def __init__(self, message: str, distance: float):
        super().__init__(f"{message} (distance to range boundary: {distance:.6g})")
        self.distance = distance


class NumericalDegeneracy(LimstrainError):
    """A finite-difference step or scaling underflowed to zero."""


class AccuracyError(LimstrainError):
    """A quadrature or extrapolation failed to reach its target tolerance.
    Carries the achieved estimate so callers can decide whether to proceed."""

    def __init__(self, message: str, estimate: float):
        super().__init__(f"{message} (achieved estimate: {estimate:.6g})")
        self.estimate = estimate


class ConfigError(LimstrainError):
    """Run configuration failed validation.  The message names the offending key."""


class CompatibilityError(ConfigError):
    """Pure-Neumann data violates the zero-mean compatibility condition."""


class SolverError(LimstrainError):
    """A nonlinear solve failed.  Carries the residual history when available."""

    def __init__(self, message: str, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class OracleFailure(LimstrainError):
    """An independent reference computation could not produce a value."""


class DomainError(LimstrainError):
    """A measure or field is supported where the formulation forbids it."""
