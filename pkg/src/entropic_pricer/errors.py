"""Exception hierarchy.

Validation errors (bad input, arbitrage, degenerate claim vectors) derive from
:class:`ValidationError`; numerical failures derive from :class:`SolverError`.
The CLI maps the former to exit code 2 and the latter to exit code 3.
"""


class EntropicPricerError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(EntropicPricerError, ValueError):
    pass


class SolverError(EntropicPricerError, RuntimeError):
    pass


# -- tree / scenario validation -------------------------------------------

class InvalidTree(ValidationError):
    pass


class NonPositiveProbability(InvalidTree):
    pass


class ProbabilitySumMismatch(InvalidTree):
    pass


class DanglingNode(InvalidTree):
    pass


class NumeraireNotOne(InvalidTree):
    pass


class ParseError(ValidationError):
    pass


class SchemaViolation(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class ClaimTreeMismatch(DimensionMismatch):
    pass


class StrategyTreeMismatch(DimensionMismatch):
    pass


TreeMismatch = ClaimTreeMismatch


class GammaOutOfRange(ValidationError):
    pass


class NoMartingaleMeasure(ValidationError):
    """The market admits arbitrage: some node has no interior martingale measure."""


class ReplicableCombination(ValidationError):
    """A nonzero combination of the traded claims is replicable.

    ``direction`` holds the offending coefficient vector.
    """

    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = direction


class DegenerateClaim(ValidationError):
    pass


class GridTooLarge(ValidationError):
    pass


# -- numerical failures ---------------------------------------------------

class NewtonDivergence(SolverError):
    pass


class SingularGram(SolverError):
    pass


class QuadratureNotConverged(SolverError):
    pass
