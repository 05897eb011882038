"""Exception types shared across the package."""


class TngdError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(TngdError, ValueError):
    pass


class NotPositiveDefinite(TngdError, ArithmeticError):
    """Cholesky hit a non-positive pivot; increase the damping."""


class NonFinite(TngdError, ArithmeticError):
    """NaN or Inf appeared, usually an unstable SDE step size."""


class TooLarge(TngdError, ValueError):
    pass


class BreakdownDetected(TngdError, ArithmeticError):
    """CG met a non-positive curvature inner product."""


class SingularInner(TngdError, ArithmeticError):
    pass


class DegenerateModel(TngdError, ArithmeticError):
    """The quadratic model predicts no change; skip the damping update."""


class Overflow(TngdError, ValueError):
    """A value exceeds the converter full scale after scaling."""


class InsufficientData(TngdError, ValueError):
    pass


class BadMagic(TngdError, ValueError):
    pass


class TruncatedFile(TngdError, ValueError):
    pass


class CountMismatch(TngdError, ValueError):
    pass


class MalformedLog(TngdError, ValueError):
    pass


class ConfigError(TngdError, ValueError):
    pass
