"""Exception hierarchy.

Every error carries the CLI exit code it maps to: 2 for input/validation
problems, 3 for positivity failures in strict mode, 4 for numeric failures.
"""


class SurvQuantError(Exception):
    exit_code = 4


class InputError(SurvQuantError, ValueError):
    exit_code = 2


class InvalidCohort(InputError):
    pass


class SentinelAboveMinimum(InputError):
    pass


class DimensionMismatch(InputError):
    pass


class LengthMismatch(InputError):
    pass


class HistoryMismatch(InputError):
    pass


class AllZeroWeights(SurvQuantError, ValueError):
    pass


class NaNInput(SurvQuantError, ValueError):
    pass


class PositivityViolation(SurvQuantError):
    exit_code = 3


class EmptyStratum(SurvQuantError):
    pass


class Separation(SurvQuantError):
    pass


class RankDeficient(SurvQuantError):
    pass


class NonConvergence(SurvQuantError):
    pass


class DegenerateDensity(SurvQuantError):
    pass


class SingularInformation(SurvQuantError):
    pass


class PipelineFailure(SurvQuantError):
    pass


class DeathMassExceedsTau(SurvQuantError, ValueError):
    pass


class BracketFailure(SurvQuantError):
    pass


class InvalidTables(SurvQuantError, ValueError):
    pass


class DeathMassWarning(UserWarning):
    """The death probability reached tau, so the quantile may be the sentinel."""


class PositivityWarning(UserWarning):
    pass


class NegativeVarianceWarning(UserWarning):
    pass
