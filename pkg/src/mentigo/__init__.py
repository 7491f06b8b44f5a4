"""Mentigo: a dual-agent mentoring engine for creative problem solving tasks.

A controller agent tracks three dynamic parameters — the task stage, the
student's states, and the guidance strategy — while a mentor agent turns each
decision into an empathetic reply. Both run over a pluggable completion
backend (live endpoint or deterministic script)."""

__version__ = "0.1.0"

from .kb import (  # noqa: F401
    KnowledgeBase,
    QUIET,
    STAGE_START,
    load_knowledge_base,
    serialize_knowledge_base,
    strategies_for_state,
    validate_alias_table,
)
