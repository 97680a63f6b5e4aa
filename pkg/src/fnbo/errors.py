"""Exception hierarchy for fnbo.

Validation problems are ``ValueError`` subclasses so callers that only know
about builtin exceptions still catch them; numerical failures are
``RuntimeError`` subclasses.
"""


class FnboError(Exception):
    """Base class for every error raised by fnbo."""


class SpecError(FnboError, ValueError):
    """A network specification violates one of its invariants."""


class CycleDetected(SpecError):
    pass


class BadOrdering(SpecError):
    pass


class DanglingFinalNode(SpecError):
    pass


class BadInterval(SpecError):
    pass


class NonpositiveCost(SpecError):
    pass


class DimensionMismatch(FnboError, ValueError):
    pass


class DomainViolation(FnboError, ValueError):
    pass


class DuplicateInputs(FnboError, ValueError):
    pass


class SingularCovariance(FnboError, RuntimeError):
    pass


class EmptySet(FnboError, ValueError):
    """Every source of the discrete set was disabled."""


class EmptyDiscreteSet(FnboError, ValueError):
    pass


class ParseError(FnboError, ValueError):
    pass


class UnknownFunctionKind(FnboError, ValueError):
    pass


class ConfigError(FnboError, ValueError):
    pass
