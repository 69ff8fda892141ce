class GreedyRoutingError(Exception):
    """Base class for every error raised by the routing analysis package."""


class ParameterError(GreedyRoutingError, ValueError):
    """Network parameters violate the model constraints."""


class ConfigError(GreedyRoutingError, ValueError):
    """An experiment configuration file or override is invalid."""


class DomainError(GreedyRoutingError, ValueError):
    """An argument lies outside the support of the function evaluated."""


class NoIntersection(GreedyRoutingError):
    """Two transmission circles do not meet at two points."""


class Degenerate(GreedyRoutingError):
    """Two transmission circles share a centre."""


class NonConvergence(GreedyRoutingError, ArithmeticError):
    """An iterative algorithm hit its iteration cap."""


class ResidueError(GreedyRoutingError, ArithmeticError):
    """A closed form that must be real left an imaginary part above tolerance."""


class BudgetExceeded(GreedyRoutingError, RuntimeError):
    """A randomized estimate missed its error target within the sample budget."""
