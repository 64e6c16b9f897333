"""Exception types raised across the package."""


class OUGaussError(Exception):
    """Base class for all package errors."""


class KernelDomainError(OUGaussError, ValueError):
    """Covariance parameters or evaluation points outside the admissible domain."""


class SingularityError(OUGaussError, ValueError):
    """Pointwise evaluation on the diagonal, where the mixed partial blows up."""


class UnsupportedRegimeError(OUGaussError, ValueError):
    """A constant or statistic was requested for a beta where it is undefined."""


class NotPSDError(OUGaussError, RuntimeError):
    """Cholesky failed even after the maximal diagonal jitter."""


class DegeneratePathError(OUGaussError, ValueError):
    """The path has (numerically) zero energy, so the estimators are undefined."""


class ConfigError(OUGaussError, ValueError):
    """Invalid run configuration (bad horizon list, budget exceeded, ...)."""


class DataError(OUGaussError, ValueError):
    """Input data contains NaN or is otherwise unusable."""
