"""Exception hierarchy for the package."""


class FbsdeError(Exception):
    """Base class for all package errors."""


class InvalidFamilyParams(FbsdeError, ValueError):
    """Raised when a risk-aversion family is built from inadmissible parameters."""


class QuadratureNonConvergence(FbsdeError, RuntimeError):
    """Raised when panel refinement for a tail integral exceeds its node budget."""


class InvalidMarketSpec(FbsdeError, ValueError):
    pass


class DomainTooSmall(FbsdeError, ValueError):
    """Raised when the wealth axis does not leave enough room around the start point."""


class NonFiniteState(FbsdeError, FloatingPointError):
    pass


class ConfigError(FbsdeError, ValueError):
    pass


class FixedPointFailure(FbsdeError, RuntimeError):
    """The z equation along a simulated path has no solution (``1 + u_x <= 0``)."""
