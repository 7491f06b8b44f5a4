"""Exception types shared across the engine."""

from __future__ import annotations


class MentigoError(Exception):
    """Base class for all engine errors."""


class ParseError(MentigoError):
    """A document could not be parsed at all (malformed JSON, wrong shape)."""


class ValidationError(MentigoError):
    """One or more invariants were violated. Carries the full violation list."""

    def __init__(self, violations: list[str] | str):
        if isinstance(violations, str):
            violations = [violations]
        self.violations = violations
        super().__init__("; ".join(violations))


class UnknownState(MentigoError):
    """A state id outside 1..23 (or a sentinel) was used where a real state is required."""


class BackendTimeout(MentigoError):
    """The completion backend did not produce a response within the retry budget."""


class BackendRefused(MentigoError):
    """The live endpoint rejected the request with a non-retryable 4xx."""


class ScriptExhausted(MentigoError):
    """A scripted backend had no matching entry and no default response."""


class PayloadMalformed(MentigoError):
    """A structured controller payload stayed unparseable after one re-ask."""


class SessionNotFound(MentigoError):
    pass


class SessionNotActive(MentigoError):
    pass


class WrongStage(MentigoError):
    """An operation requires a stage the session has not reached."""


class CorruptLog(MentigoError):
    """An event log has sequence gaps or violates session invariants."""


class CodingFailed(MentigoError):
    """Backend-mode turn coding produced no usable labels after one re-ask."""


class ScoringFailed(MentigoError):
    """Backend-mode report scoring produced no usable scores after one re-ask."""


class SinkError(MentigoError):
    """A CSV sink could not be written."""
