"""Exception and warning types shared across the package."""


class CatstabError(Exception):
    """Base class for all package errors."""


class DimensionError(CatstabError, ValueError):
    """Invalid truncation dimension or mismatched operator layouts."""


class InvalidIndexError(CatstabError, IndexError):
    """Fock index outside the truncated space."""


class ZeroVectorError(CatstabError, ValueError):
    """A state constructor produced the zero vector."""


class InvalidStateError(CatstabError, ValueError):
    """Matrix violates the density-matrix invariants."""


class CapacityError(CatstabError, MemoryError):
    """Superoperator would exceed the configured size cap."""


class IntegrationError(CatstabError, RuntimeError):
    """Propagator failed to meet its tolerance.

    ``t_reached`` holds the last time the state was successfully advanced to.
    """

    def __init__(self, message, t_reached=None):
        super().__init__(message)
        self.t_reached = t_reached


class DegenerateSteadyStateError(CatstabError, RuntimeError):
    """The Liouvillian null space has dimension larger than one."""

    def __init__(self, message, dimension):
        super().__init__(message)
        self.dimension = dimension


class ConfigError(CatstabError, ValueError):
    """Experiment or parameter configuration failed validation."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TruncationWarning(UserWarning):
    """Probability weight lost to Fock-space truncation is not negligible."""


class HierarchyWarning(UserWarning):
    """A rate-separation assumption of the reduced model is violated."""
