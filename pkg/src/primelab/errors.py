"""Exception hierarchy shared by every primelab module."""


class PrimeLabError(Exception):
    """Base class for all library errors."""


class GranularityTooLarge(PrimeLabError, ValueError):
    pass


class EmptyCounts(PrimeLabError, ValueError):
    pass


class TokenOutOfRange(PrimeLabError, ValueError):
    def __init__(self, message, position=None):
        super().__init__(message)
        self.position = position


class InvalidCode(PrimeLabError, ValueError):
    pass


class IncompatibleBases(PrimeLabError, ValueError):
    pass


class CorruptFile(PrimeLabError, ValueError):
    pass


class TimeOutOfRange(PrimeLabError, ValueError):
    pass


class TimeOrderError(PrimeLabError, ValueError):
    pass


class CarryOverViolation(PrimeLabError, ValueError):
    pass


class PosteriorShapeError(PrimeLabError, ValueError):
    pass


class BudgetExceeded(PrimeLabError, RuntimeError):
    pass


class RouteMismatch(PrimeLabError, AssertionError):
    pass


class NotNormalized(PrimeLabError, ValueError):
    pass


class InsufficientData(PrimeLabError, ValueError):
    pass


class DegenerateFit(PrimeLabError, RuntimeError):
    pass


class ShapeMismatch(PrimeLabError, ValueError):
    pass


class DivergenceDetected(PrimeLabError, RuntimeError):
    pass


class NonFinite(PrimeLabError, ValueError):
    pass


class ZeroMatrix(PrimeLabError, ValueError):
    pass
