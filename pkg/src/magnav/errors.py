"""Exception types raised across the package."""


class MagNavError(Exception):
    """Base class for all package errors."""


class ConfigError(MagNavError):
    """Malformed or inconsistent configuration file."""


class DataError(MagNavError):
    """Malformed dataset (bad columns, non-increasing timestamps, ...)."""


class EvaluationInsideExclusionZone(MagNavError):
    """Field queried too close to a dipole source."""


class NotSymmetricTraceless(MagNavError, ValueError):
    pass


class DegenerateArray(MagNavError, ValueError):
    """Magnetometer offsets do not form the expected cross layout."""


class EmptyInterval(MagNavError, ValueError):
    pass


class SolverError(MagNavError):
    pass


class SingularNormalEquations(SolverError):
    """Gauss-Newton normal equations are rank deficient.

    ``pose_index`` is the first pose whose block lost rank during
    factorization (the unconstrained one).
    """

    def __init__(self, message, pose_index=None):
        super().__init__(message)
        self.pose_index = pose_index


class SingularInformation(SolverError):
    pass


class NonFiniteCost(SolverError):
    pass


class AllInvariantsConstant(MagNavError, ValueError):
    pass


class SingularRelativeCovariance(MagNavError):
    pass


class NoOverlappingTimestamps(DataError):
    pass
