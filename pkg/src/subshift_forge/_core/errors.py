from __future__ import annotations


class InvalidArgumentError(ValueError):
    """An argument violates an operation's precondition."""


class SequenceParseError(InvalidArgumentError):
    """A sequence file could not be parsed."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class CapacityError(ValueError):
    """An enumeration would be too large to carry out."""


class ConfigError(ValueError):
    """A run config is malformed or does not match an artifact."""


class ScheduleError(ValueError):
    """The schedule config is inconsistent.

    Parameters
    ----------
    message
        Human readable description.
    constraint
        Name of the violated constraint, e.g. ``"K_m strictly increasing"``.
    """

    def __init__(self, message: str, constraint: str):
        super().__init__(f"{message} (violated: {constraint})")
        self.constraint = constraint


class ConstructionFailedError(RuntimeError):
    """No candidate block survived the tests of a level."""

    def __init__(self, message: str, level: int, worst: float, draws: int):
        super().__init__(message)
        self.level = level
        self.worst = worst
        self.draws = draws


class VerificationError(AssertionError):
    """A gating verification check failed."""
