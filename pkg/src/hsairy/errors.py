"""Exception hierarchy shared by all modules.

Every error maps onto one of two CLI exit codes: usage-type errors (bad
parameters) exit with 2 and numeric/budget errors exit with 3.
"""


class HsAiryError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class UsageError(HsAiryError, ValueError):
    """Invalid parameters; maps to CLI exit code 2."""

    exit_code = 2


class NumericError(HsAiryError, ArithmeticError):
    """A computation could not be completed to the requested accuracy."""

    exit_code = 3


# parameter-domain errors
class InvalidAngle(UsageError):
    pass


class NonPositiveTime(UsageError):
    pass


class InvalidBoundaryParam(UsageError):
    pass


class InvalidShift(UsageError):
    pass


class InvalidTime(UsageError):
    pass


class OddDimension(UsageError):
    pass


class ExpansionTooLarge(UsageError):
    pass


class DimensionMismatch(UsageError):
    pass


class OverlappingIntervals(UsageError):
    pass


class DimensionCap(UsageError):
    pass


class DegenerateBranch(UsageError):
    pass


# numeric / budget errors
class BudgetExceeded(NumericError):
    pass


class NonFiniteIntegrand(NumericError):
    pass


class QuadratureFailure(NumericError):
    pass


class TruncationFailure(NumericError):
    pass


class SkewnessError(NumericError):
    pass


class RejectionBudgetExceeded(NumericError):
    def __init__(self, message, acceptance_estimate=None):
        super().__init__(message)
        self.acceptance_estimate = acceptance_estimate
