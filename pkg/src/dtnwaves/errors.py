"""Exception types shared across the package."""


class DomainError(ValueError):
    """Input lies outside the domain where an operation is defined."""


class ValidityError(ValueError):
    """A constructed object violates a physical invariant (e.g. nonpositive depth)."""


class InsufficientDataError(ValueError):
    """Not enough samples to perform a fit or a convergence study."""


class PreconditionError(ValueError):
    """A documented precondition of an operation was not met."""


class ConsistencyError(ArithmeticError):
    """Two quantities that must agree by construction do not."""


class ResolutionError(ValueError):
    """The grid does not resolve the semiclassical scale h."""


class NumericError(ArithmeticError):
    """A numerical routine failed (singular system, non-finite values, ...)."""


class ConvergenceError(NumericError):
    """An iterative method hit its iteration cap.

    ``achieved`` carries the last residual (or iterate history) for diagnosis.
    """

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class SingularityError(NumericError):
    """A trajectory reached a point where the Hamiltonian is not smooth."""


class DegeneracyError(NumericError):
    """A ray fan collapsed (spreading identically zero over an interval)."""
