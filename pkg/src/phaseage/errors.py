"""Exception hierarchy shared by every module."""

from __future__ import annotations


class PhaseAgeError(Exception):
    """Base class for all errors raised by :mod:`phaseage`."""


class SingularMatrixError(PhaseAgeError):
    """Raised when a resolvent is requested for a (near-)singular matrix."""


class QuadratureError(PhaseAgeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class InvalidModel(PhaseAgeError, ValueError):
    """A model or parameter set violates one or more structural invariants.

    ``violations`` holds ``(code, message)`` pairs, one per broken invariant,
    so callers can report every problem at once.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        text = "; ".join(f"{code}: {msg}" for code, msg in self.violations)
        super().__init__(text or "invalid model")

    @property
    def codes(self):
        return [code for code, _ in self.violations]


class ConditioningError(PhaseAgeError):
    """The conditioning event has (numerically) zero probability."""


class UnsupportedScheme(PhaseAgeError):
    """The requested law is not defined under the given observation scheme."""


class InsufficientAcceptance(PhaseAgeError):
    """Too few Monte Carlo replications satisfied the conditioning event."""

    def __init__(self, achieved, required):
        self.achieved = int(achieved)
        self.required = int(required)
        super().__init__(
            f"only {self.achieved} accepted samples, need at least {self.required}"
        )
