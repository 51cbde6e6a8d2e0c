"""
Unified exception definitions.

Every error is an HTTPException so the API layer can return it as is; the
CLI reads ``exit_code`` instead of ``status_code``.
"""

from typing import Any

from fastapi import HTTPException, status


class AppException(HTTPException):
    """Base application exception."""

    exit_code: int = 1

    def __init__(
        self,
        status_code: int = status.HTTP_500_INTERNAL_SERVER_ERROR,
        detail: Any = "Internal error",
    ):
        super().__init__(status_code=status_code, detail=detail)


class ConfigError(AppException):
    exit_code = 2

    def __init__(self, detail: Any = "Invalid configuration"):
        super().__init__(
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            detail=detail,
        )


class InvalidRatesError(ConfigError):
    def __init__(self, detail: Any = "Rates must be positive and finite"):
        super().__init__(detail=detail)


class DomainError(ConfigError):
    def __init__(self, detail: Any = "Argument outside the admissible domain"):
        super().__init__(detail=detail)


class UndeterminedError(AppException):
    exit_code = 3

    def __init__(self, detail: Any = "Verdict inconclusive at the configured horizon"):
        super().__init__(
            status_code=status.HTTP_422_UNPROCESSABLE_ENTITY,
            detail=detail,
        )


class PreconditionRefused(AppException):
    exit_code = 4

    def __init__(self, detail: Any = "Precondition not met"):
        super().__init__(
            status_code=status.HTTP_409_CONFLICT,
            detail=detail,
        )


class IdentityViolation(AppException):
    exit_code = 5

    def __init__(self, detail: Any = "Identity violated"):
        super().__init__(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail=detail,
        )


class NumericalError(AppException):
    exit_code = 5

    def __init__(self, detail: Any = "Numerical failure"):
        super().__init__(
            status_code=status.HTTP_500_INTERNAL_SERVER_ERROR,
            detail=detail,
        )


class RateOverflowError(NumericalError):
    def __init__(self, detail: Any = "Rate exceeds the representable ceiling"):
        super().__init__(detail=detail)


class BisectionError(NumericalError):
    def __init__(self, detail: Any = "Eigenvalue bisection did not converge"):
        super().__init__(detail=detail)
