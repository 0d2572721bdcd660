"""Exception hierarchy.

Every error raised by the library derives from :class:`MetaCVError`. The CLI
maps :class:`ValidationError` subclasses to exit code 2 and
:class:`NumericalError` subclasses to exit code 3.
"""


class MetaCVError(Exception):
    """Base class for all library errors."""


class ValidationError(MetaCVError):
    """Input data or arguments violate a documented invariant."""


class ParseError(ValidationError):
    """A study file could not be parsed."""

    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class UnknownLevel(ValidationError):
    """A factor level is not part of the moderator schema."""


class InsufficientDf(ValidationError):
    """Fewer studies than regression columns plus one."""


class NonEqualWeightsForGM(ValidationError):
    """The geometric mean is only defined with equal weights."""


class FactorModeratorUnsupported(ValidationError):
    """Continuous plots need a numeric moderator."""


class NumericalError(MetaCVError):
    """A computation is undefined or numerically degenerate."""


class RankDeficient(NumericalError):
    """The design matrix does not have full column rank."""


class UndefinedMeasure(NumericalError):
    """The heterogeneity measure or its interval is undefined (e.g. 0/0)."""


class ZeroEffect(NumericalError):
    """A grid point has an estimated effect of exactly zero."""


class ZeroTau(NumericalError):
    """The between-study variance estimate is zero."""


class DegenerateVariance(NumericalError):
    """The typical within-study variance cannot be computed."""
