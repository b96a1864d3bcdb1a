"""Exception hierarchy shared by every module."""


class IPWGEEError(Exception):
    """Base class for all package errors."""


class DomainError(IPWGEEError, ValueError):
    """A link function was evaluated at a non-finite argument."""


class DataError(IPWGEEError, ValueError):
    """The dataset violates a structural or family-specific invariant."""


class SchemaError(DataError):
    """A long-format CSV file does not describe a balanced panel."""


class DegenerateVarianceError(IPWGEEError, ArithmeticError):
    """A weighted variance sigma*_jj was non-positive or non-finite."""


class CorrelationInvalidError(IPWGEEError, ValueError):
    """A working correlation matrix is not positive definite."""

    def __init__(self, message, lambda_min=None):
        super().__init__(message)
        self.lambda_min = lambda_min


class InsufficientClustersError(IPWGEEError, ValueError):
    """Fewer clusters than regression parameters."""


class SeparationError(IPWGEEError, ArithmeticError):
    """The missingness logistic fit diverged (complete or quasi-complete separation)."""

    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = direction


class CompleteDataSignal(IPWGEEError):
    """Raised by the missingness fit when every response is observed.

    Callers catch it and fall back to observation probabilities equal to one.
    """


class SingularDesignError(IPWGEEError, ArithmeticError):
    """The information matrix H*_n is not positive definite."""


class SingularInformationError(SingularDesignError):
    """The plug-in information matrix is singular at the fitted coefficients."""


class DesignError(IPWGEEError, ValueError):
    """A simulation design is invalid."""


class NotConvergedError(IPWGEEError):
    """An operation that requires a converged fit received a non-converged one."""
