"""Exception types shared across the package."""


class DemkitError(Exception):
    """Base class for all package errors."""


class DimensionError(DemkitError, ValueError):
    """Operands have incompatible or unsupported sizes."""


class SizeGuardError(DimensionError):
    """A dense 2^n computation was requested above the supported cap."""


class PoleError(DemkitError, ArithmeticError):
    """A logarithm was requested of a nonpositive polarization.

    ``subset`` holds the integer view of the offending detector subset
    when it is known.
    """

    def __init__(self, message, subset=None):
        super().__init__(message)
        self.subset = subset


class DomainError(DemkitError, ValueError):
    """A rate or probability lies outside its admissible range."""


class DemParseError(DemkitError, ValueError):
    """Malformed detector error model text."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class SyndromeFormatError(DemkitError, ValueError):
    """Malformed syndrome file."""


class MissingCoordsError(DemkitError, ValueError):
    """An operation needs detector coordinates that are absent."""


class RankDeficientError(DemkitError, ArithmeticError):
    """A least-squares design does not resolve every hyperedge."""

    def __init__(self, message, unresolved=()):
        super().__init__(message)
        self.unresolved = list(unresolved)


class ConvergenceError(DemkitError, ArithmeticError):
    """An iterative solver failed to converge."""
