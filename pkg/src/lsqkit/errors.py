"""Exception types shared across the package."""


class LsqKitError(Exception):
    """Base class for all package-specific errors."""


class DimensionMismatchError(LsqKitError, ValueError):
    """A vector or matrix argument has the wrong shape."""

    def __init__(self, what, expected, actual):
        super().__init__(f"{what}: expected length {expected}, got {actual}")
        self.expected = expected
        self.actual = actual


class UnsupportedCapabilityError(LsqKitError):
    """An operator was asked for a hook it does not provide."""


class DegenerateStartError(LsqKitError, ValueError):
    """Bidiagonalization started from the zero vector."""


class RankDeficiencyError(LsqKitError):
    """A dense factorization detected numerical rank deficiency."""


class SolverError(LsqKitError):
    """An iterative solve did not reach its convergence criterion."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConfigurationError(LsqKitError, ValueError):
    """Inconsistent or invalid configuration values."""
