"""Exception types shared across the package."""

from __future__ import annotations


class ConfigurationError(ValueError):
    """A configuration value is structurally invalid (wrong sign, wrong type,
    incompatible with the grid)."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of the operation."""


class StateError(RuntimeError):
    """The object is not in the state the operation requires (e.g. a path
    whose jump signs were already assigned)."""


class NotAbsorbed(RuntimeError):
    """A path failed to hit its absorbing boundary within the horizon.

    Carries the horizon that was searched so callers can retry or widen.
    """

    def __init__(self, horizon: float, message: str | None = None):
        self.horizon = horizon
        super().__init__(message or f"path not absorbed within horizon {horizon!r}")


class SamplingTooHard(RuntimeError):
    """A rejection sampler's acceptance rate fell below its configured floor.

    ``diagnostics`` holds the counters observed before giving up.
    """

    def __init__(self, message: str, diagnostics: dict | None = None):
        self.diagnostics = dict(diagnostics or {})
        super().__init__(message)
