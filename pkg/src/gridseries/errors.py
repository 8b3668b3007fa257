"""Exception hierarchy shared by all pipeline stages."""


class GridSeriesError(Exception):
    """Base class for every error raised by this package."""


class ParseError(GridSeriesError, ValueError):
    """An input file could not be parsed."""


class ValidationError(GridSeriesError, ValueError):
    """Input data violates a structural invariant."""


class DegenerateRegionError(ValidationError):
    """A region has zero total weight and no fallback is configured."""


class InfeasibleError(GridSeriesError):
    """No solution satisfies the constraints.

    ``certificate`` carries whatever evidence the raising stage collected.
    """

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class SolverError(GridSeriesError):
    """A numerical solver failed for reasons other than infeasibility."""


class SizeLimitError(GridSeriesError, ValueError):
    """Instance too large for an exhaustive method."""
