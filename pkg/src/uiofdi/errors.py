"""Exception types shared across the library."""


class UioFdiError(Exception):
    """Base class for all library errors."""


class RankDeficient(UioFdiError):
    """A matrix required to have full row/column rank does not."""


class InvalidArgument(UioFdiError):
    pass


class DimensionMismatch(UioFdiError):
    pass


class IndexOutOfRange(UioFdiError):
    pass


class SingularInertia(UioFdiError):
    pass


class InsufficientRedundancy(UioFdiError):
    """Too many actuators removed (or constrained) for exact allocation."""


class ReducedRankDeficient(UioFdiError):
    """The reduced/combined allocation matrix lost row rank."""


class MissingCoefficients(UioFdiError):
    pass


class RankConditionFailed(UioFdiError):
    """The observer rank condition rank(W_J) = rank(C W_J) = L(J) failed."""


class NotHurwitz(UioFdiError):
    """Synthesized observer matrix F has eigenvalues outside the open left half-plane."""


class EmptyBank(UioFdiError):
    pass


class WarmupIncomplete(UioFdiError):
    pass


class UnknownHypothesis(UioFdiError):
    pass


class NonFinite(UioFdiError):
    pass


class SchemaMismatch(UioFdiError):
    pass


class ConfigError(UioFdiError):
    pass
