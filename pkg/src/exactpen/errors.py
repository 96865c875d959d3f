"""Exception and warning types raised by the toolkit."""


class ExactPenError(Exception):
    """Base class for all toolkit errors."""


class NonFiniteState(ExactPenError):
    """A rollout produced a non-finite state entry."""

    def __init__(self, node: int, message: str | None = None):
        self.node = int(node)
        super().__init__(message or f"non-finite state at node {self.node}")


class MissingJacobian(ExactPenError):
    """The dynamics model has no Jacobian evaluators."""


class UnsupportedDynamics(ExactPenError):
    """An operation that needs linear dynamics received something else."""


class MissingSupportOracle(ExactPenError):
    """The admissible control set has no pointwise support function."""


class NotFeasibleReference(ExactPenError):
    """A reference control handed to a diagnostic is not feasible."""


class NonPositiveRate(ExactPenError):
    """A descent rate a <= 0 was passed to the lambda* bound."""


class SearchSpaceTooLarge(ExactPenError):
    """The brute-force enumeration exceeds its size budget."""


class UnknownExample(ExactPenError, KeyError):
    """No corpus entry is registered under the requested name."""

    def __str__(self):
        return Exception.__str__(self)


class ProblemFormatError(ExactPenError, ValueError):
    """A problem document does not follow the file schema."""


class StallWarning(UserWarning):
    """The line search failed at the smoothing floor."""
