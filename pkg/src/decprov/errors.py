"""Exception hierarchy shared by every decprov module."""

from __future__ import annotations


class DecProvError(Exception):
    """Base class for all decprov errors."""


class InvalidIdentifier(DecProvError, ValueError):
    pass


class ValidationFailed(DecProvError):
    """A record violates the provenance model."""


class KindConstraintViolation(ValidationFailed):
    pass


class InvalidAttribute(ValidationFailed):
    pass


class DuplicateId(ValidationFailed):
    pass


class DanglingReference(DecProvError):
    pass


class UnknownNode(DecProvError):
    pass


class TemporalViolation(DecProvError):
    pass


class PolicyBlocked(DecProvError):
    """A Block rule rejected a capture call.

    ``alert`` is the id of the policy-alert node appended in its place.
    """

    def __init__(self, verdict, alert=None):
        super().__init__(verdict.explanation)
        self.verdict = verdict
        self.alert = alert


class UnresolvableContext(DecProvError):
    """A policy condition needed a node or attribute that is not available."""


class PolicyLoadError(DecProvError):
    pass


class MalformedRecord(DecProvError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class ChainMismatch(DecProvError):
    def __init__(self, line: int, reason: str = "declared hash does not match recomputed hash"):
        super().__init__(f"line {line}: {reason}")
        self.line = line


class UnknownRoot(DecProvError):
    pass


class ScenarioError(DecProvError):
    pass


class ParseError(ScenarioError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class UnknownComponent(ScenarioError):
    pass


class UnknownDomain(ScenarioError):
    pass


class NonMonotoneTimestamps(ScenarioError):
    pass


class TickOutOfRange(ScenarioError):
    pass
