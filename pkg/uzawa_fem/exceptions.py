class MinResError(Exception):
    """Base class for every error raised by the minimal-residual solver"""


class InvalidArgumentError(MinResError, ValueError):
    """Raised when a value object or operation receives an invalid argument"""


class OutOfDomainError(MinResError, ValueError):
    """Raised when a function is evaluated outside its domain"""


class SingularBasisError(MinResError):
    """Raised when a Gram matrix cannot be factorised (collapsed breakpoints)"""


class DegenerateResidualError(MinResError):
    """Raised when every residual start ends on a singular basis"""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class SolverFailure(MinResError):
    """Fatal linear-algebra failure (mass or fine Gram solve)"""


class SolutionUnavailable(MinResError):
    """No closed-form solution exists for the given problem data"""
