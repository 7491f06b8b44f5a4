"""Plain-text prompt templates with `{{placeholder}}` slots.

Templates live under the packaged ``data/prompts/`` tree; rendering is a
literal substitution, no logic. A leftover placeholder after rendering is a
programming error and raises immediately rather than leaking into a prompt.
"""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

_SLOT = re.compile(r"\{\{([a-z0-9_]+)\}\}")


@lru_cache(maxsize=None)
def load_template(relpath: str) -> str:
    """Read a packaged template, e.g. ``controller/stage_decision.txt``."""
    root = resources.files("mentigo") / "data" / "prompts"
    return (root / relpath).read_text(encoding="utf-8")


def render(template: str, slots: dict[str, str]) -> str:
    def fill(match: re.Match[str]) -> str:
        key = match.group(1)
        if key not in slots:
            raise KeyError(f"template slot {{{{{key}}}}} has no value")
        return slots[key]

    return _SLOT.sub(fill, template)


def render_named(relpath: str, slots: dict[str, str]) -> str:
    return render(load_template(relpath), slots)
