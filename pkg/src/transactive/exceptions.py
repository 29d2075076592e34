"""Exception hierarchy shared across the package."""


class MarketError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(MarketError, ValueError):
    """An argument violates a documented precondition."""


class TopologyError(MarketError, ValueError):
    """The network is not a connected radial tree rooted at the slack bus."""


class PowerFlowDivergence(MarketError, RuntimeError):
    """A load-flow iteration failed to reach its tolerance."""

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class InfeasibleMarketError(MarketError, ValueError):
    """Supply and demand bounds admit no balanced allocation."""


class StepSizeError(MarketError, RuntimeError):
    """The price iteration is diverging; the step size is too large."""


class ScenarioParseError(MarketError, ValueError):
    """A scenario document is malformed."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class GridTooLargeError(MarketError, ValueError):
    """A brute-force enumeration exceeds its size cap."""
