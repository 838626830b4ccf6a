"""Exception types shared across the package."""


class PotoptError(Exception):
    """Base class for all package-specific errors."""


class DomainError(PotoptError, ValueError):
    """An input lies outside the physical domain of a correlation."""


class GeometryError(PotoptError, ValueError):
    """A geometric precondition is violated (ledge fills cavity, ACD below bubble layer, ...)."""


class ParameterError(PotoptError, ValueError):
    """A parameter file or parameter set violates an invariant.

    The message names the offending field.
    """


class StabilityError(PotoptError, ValueError):
    """An explicit integration step exceeds the reported stability bound."""


class PriceFileError(PotoptError, ValueError):
    """A price CSV cannot be parsed; message carries the line number."""


class CoverageError(PotoptError, ValueError):
    """A price profile does not cover the requested horizon."""


class InfeasibleProblemError(PotoptError, RuntimeError):
    """Raised when an optimization step that must succeed reports infeasibility."""

    def __init__(self, message, iteration=None, result=None):
        super().__init__(message)
        self.iteration = iteration
        self.result = result
