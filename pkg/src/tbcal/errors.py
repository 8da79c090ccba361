"""Exception hierarchy shared by all modules."""


class TbcalError(Exception):
    """Base class for toolkit errors."""


class ParameterDomainError(TbcalError, ValueError):
    """A parameter lies outside the domain of the model."""


class InfeasibleError(TbcalError, ValueError):
    """Moments admit no thermal-model representation."""


class ResourceError(TbcalError, MemoryError):
    """A requested grid would exceed the configured memory cap."""

    def __init__(self, message, required_cutoff=None):
        super().__init__(message)
        self.required_cutoff = required_cutoff


class InsufficientDataError(TbcalError, ValueError):
    pass


class UndefinedCovarianceError(TbcalError, ValueError):
    """Normalized covariance requested for a record with a constant arm."""


class OptimizationFailedError(TbcalError, RuntimeError):
    pass


class CalibrationFailedError(TbcalError, RuntimeError):
    """No feasible point was found; ``violations`` tallies why."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = dict(violations or {})


class FormatError(TbcalError, ValueError):
    """Malformed input file or config; carries the offending line or key."""

    def __init__(self, message, line=None, key=None):
        super().__init__(message)
        self.line = line
        self.key = key
