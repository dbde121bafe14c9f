"""Exception types shared across the package."""


class FlowboxError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(FlowboxError):
    """Expression source could not be parsed.

    Carries the byte offset of the offending token in ``offset``.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class BindingError(FlowboxError):
    """An expression referenced a variable with no bound value."""


class DomainError(FlowboxError):
    """Evaluation left the domain: log/sqrt of a bad argument, division
    by zero, fractional power of a negative base, or a non-finite result."""


class ValidationError(FlowboxError):
    """A document or in-memory object violates its schema or invariants.

    ``path`` locates the offending field, e.g. ``"g[0][1]"``.
    """

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class TransformError(FlowboxError):
    """The straightening transform broke down (singular Jacobian,
    non-vanishing residual where structure demands zero, ...)."""


class IntegrationError(FlowboxError):
    """Trajectory integration aborted (state norm guard, domain error
    inside a field evaluation)."""


class AdmissibilityError(FlowboxError):
    """A control variation leaves the admissible box; reports the first
    violating grid time in ``time``."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class GridError(FlowboxError):
    """Sampled data does not cover the window an integral needs."""
