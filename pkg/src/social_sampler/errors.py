"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: :class:`InvalidInputError` -> 2,
:class:`CapExceededError` -> 3, :class:`NumericError` -> 4.
"""

from __future__ import annotations


class SocialSamplerError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(SocialSamplerError, ValueError):
    """An argument or input file violates a documented precondition."""


class IntegrityError(InvalidInputError):
    """Input data is internally inconsistent (conflicting ids, misaligned calendars)."""


class SingularDesignError(InvalidInputError):
    """A regression design matrix does not have full column rank."""


class CapExceededError(SocialSamplerError):
    """A requested workload exceeds a configured resource cap."""


class NumericError(SocialSamplerError, ArithmeticError):
    """A computation produced a non-finite intermediate value.

    ``index`` names the offending option (row) when one can be identified.
    """

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message if index is None else f"{message} (option index {index})")
        self.index = index
