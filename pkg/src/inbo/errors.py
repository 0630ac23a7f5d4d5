"""Exception hierarchy.

Every error carries a short machine-readable ``category`` which the CLI
prints and maps to a nonzero exit code.
"""

from __future__ import annotations


class InBOError(Exception):
    category = "error"
    exit_code = 1


class DomainError(InBOError, ValueError):
    """A point or parameter lies outside the domain an operation accepts."""

    category = "domain"
    exit_code = 2


class SingularityError(InBOError, ArithmeticError):
    category = "singular_metric"
    exit_code = 3


class GridError(InBOError, ValueError):
    category = "grid"
    exit_code = 4


class ReflectionError(InBOError, RuntimeError):
    """Reject-and-resample exhausted its attempts for one path."""

    category = "reflection"
    exit_code = 5

    def __init__(self, path: int, step: int, attempts: int):
        self.path = path
        self.step = step
        self.attempts = attempts
        super().__init__(
            f"path {path} could not leave step {step} after {attempts} resamples; "
            "start point is in a sliver region or step_dt is too large"
        )


class TimeLookupError(InBOError, KeyError):
    category = "lookup"
    exit_code = 6

    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


class InputError(InBOError, ValueError):
    category = "input"
    exit_code = 7


class ConditioningError(InBOError, ArithmeticError):
    category = "conditioning"
    exit_code = 8


class FitError(InBOError, RuntimeError):
    category = "fit"
    exit_code = 9


class ExhaustionError(InBOError, RuntimeError):
    category = "exhausted"
    exit_code = 10


class IngestionError(InBOError, ValueError):
    category = "ingestion"
    exit_code = 11


class ParseError(InBOError, ValueError):
    category = "parse"
    exit_code = 12


class CacheError(InBOError, ValueError):
    category = "cache"
    exit_code = 13
