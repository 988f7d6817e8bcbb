"""Exception hierarchy shared by the estimation modules."""


class MldfmError(Exception):
    """Base class for all package errors."""


class ParameterError(MldfmError, ValueError):
    """Invalid parameter value or inconsistent dimensions."""


class SpecError(ParameterError):
    """Idiosyncratic covariance specification is not positive definite."""


class DegeneracyError(MldfmError, ArithmeticError):
    """A matrix that must have full rank does not."""


class RankError(DegeneracyError):
    """The panel carries fewer than ``r`` non-negligible principal components."""


class UpdateError(DegeneracyError):
    """A least-squares step of the sequential estimator is singular."""


class ExperimentError(MldfmError):
    """Too many Monte Carlo replications failed."""
