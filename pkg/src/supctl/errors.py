"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class SupctlError(Exception):
    """Base class for all package errors."""


class DimensionError(SupctlError, ValueError):
    """Matrix or vector shapes are incompatible."""


class NonFiniteError(SupctlError, ValueError):
    """A matrix contains NaN or Inf entries."""


class InstabilityError(SupctlError, ValueError):
    """An operation that requires a Schur-stable matrix received an unstable one."""


class DegenerateInputError(SupctlError, ValueError):
    """Input has no meaningful answer (e.g. leading singular vectors of zero)."""


class InvalidScenarioError(SupctlError):
    """A candidate bank violates one of the standing assumptions."""


class ExcitationError(SupctlError, ArithmeticError):
    """Regressors carry no energy, so a least-squares slope is undefined."""


class LogicError(SupctlError, RuntimeError):
    """An operation was invoked out of its allowed order."""


class ConfigError(SupctlError, ValueError):
    """Scenario file is malformed or inconsistent."""


class ScenarioParseError(ConfigError):
    """Scenario file could not be parsed."""


class ProbabilityRangeError(ConfigError):
    """A confidence parameter lies outside the open interval (0, 1)."""


class GenerationError(SupctlError):
    """Rejection sampling exhausted its budget without producing a scenario."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
