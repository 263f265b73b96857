"""Exception types shared across the engine, store and interfaces."""

from __future__ import annotations


class BanditError(Exception):
    """Base class for domain errors. ``code`` is a stable machine-readable tag."""

    code = "error"


class ValidationError(BanditError, ValueError):
    code = "invalid"


class InvalidTransition(BanditError):
    """An operation was called in a state that does not allow it."""

    code = "invalid-transition"


class DuplicateExperiment(BanditError):
    code = "duplicate-experiment"


class UnknownExperiment(BanditError, KeyError):
    code = "unknown-experiment"

    def __str__(self) -> str:
        return Exception.__str__(self)


class ConcurrentModification(BanditError):
    """Another caller holds the experiment for mutation."""

    code = "concurrent-modification"


class SnapshotError(BanditError):
    code = "corrupt-snapshot"


class SingularDesignError(BanditError):
    """The regression design matrix is rank deficient."""

    code = "singular-design"

    def __init__(self, columns: list[str]):
        self.columns = list(columns)
        super().__init__(f"design matrix is singular; collinear columns: {', '.join(self.columns)}")
