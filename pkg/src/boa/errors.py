"""Exception hierarchy shared by every module."""


class BoaError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(BoaError, ValueError):
    """Vector lengths or shapes do not agree."""


class DomainError(BoaError, ValueError):
    """A value lies outside the domain an operation accepts."""


class BuildError(BoaError, ValueError):
    pass


class QueryError(BoaError, ValueError):
    pass


class FormatError(BoaError, ValueError):
    """A file is truncated, corrupt, or written by an incompatible version."""


class ConsistencyError(BoaError, ValueError):
    """Artifacts or arguments disagree with each other (K, d, totals...)."""


class FitError(BoaError, ValueError):
    pass


class SpecError(BoaError, ValueError):
    pass


class UsageError(BoaError, RuntimeError):
    """An object was used in a state that does not allow the call."""


class ExpertError(BoaError, RuntimeError):
    pass


class RecordError(BoaError, RuntimeError):
    pass
