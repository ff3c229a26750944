"""Exception and warning types shared across the package."""


class DiscriminationError(Exception):
    """Base class for every error raised by this package."""


class ScenarioError(DiscriminationError):
    """A scenario document or builder argument is unusable."""


class ShapeError(DiscriminationError):
    """Arrays passed to a model or sequence have inconsistent shapes."""


class InnerProblemInfeasible(DiscriminationError):
    """The inner separation LP of a pair has no feasible uncertainty.

    This means the uncertainty polytopes (together with the responsibility
    constraints at the given input) are empty.
    """

    def __init__(self, pair, message=None):
        self.pair = pair
        super().__init__(message or f"Inner LP of pair {pair} is infeasible (empty uncertainty set)")


class LpNumericalError(DiscriminationError):
    """The simplex kernel could not recover from numerical breakdown."""


class UnsupportedObjectiveError(DiscriminationError):
    """The objective needs a solver capability the built-in kernel lacks."""


class BackendError(DiscriminationError):
    """Failure while running an external solver backend."""


class BackendMissing(BackendError):
    """The backend executable could not be started."""


class BackendParseError(BackendError):
    """The backend produced output that does not follow the solution format."""


class SamplingFailed(DiscriminationError):
    """Rejection sampling ran out of retries."""

    def __init__(self, constraint, retries):
        self.constraint = constraint
        self.retries = retries
        super().__init__(f"Sampling failed after {retries} retries: {constraint}")


class InvalidationError(DiscriminationError):
    """An observation window does not fit the model it is tested against."""


class AllInvalidated(DiscriminationError):
    """Observed data is inconsistent with every model hypothesis."""

    def __init__(self, verdict):
        self.verdict = verdict
        super().__init__("All models invalidated by the observed window")


class SuboptimalityWarning(UserWarning):
    """Conservative design applied where P̄_y Γ_yu ≠ 0; the optimum is not guaranteed."""
