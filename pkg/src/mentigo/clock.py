"""Injectable clocks so inactivity timers and event logs are deterministic in tests."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone
from typing import Protocol


def truncate_ms(dt: datetime) -> datetime:
    """Drop sub-millisecond precision; all engine timestamps are ms-precision UTC."""
    return dt.replace(microsecond=(dt.microsecond // 1000) * 1000)


def format_instant(dt: datetime) -> str:
    """`2026-01-01T00:00:00.000Z` — fixed width so event logs are byte-stable."""
    dt = truncate_ms(dt.astimezone(timezone.utc))
    return dt.strftime("%Y-%m-%dT%H:%M:%S.") + f"{dt.microsecond // 1000:03d}Z"


def parse_instant(text: str) -> datetime:
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    return truncate_ms(datetime.fromisoformat(text))


class Clock(Protocol):
    def now(self) -> datetime: ...


class SystemClock:
    def now(self) -> datetime:
        return truncate_ms(datetime.now(timezone.utc))


class ManualClock:
    """Test clock that only moves when told to."""

    def __init__(self, start: datetime | None = None):
        self._now = truncate_ms(start or datetime(2026, 1, 1, tzinfo=timezone.utc))

    def now(self) -> datetime:
        return self._now

    def advance(self, seconds: float) -> datetime:
        self._now = truncate_ms(self._now + timedelta(seconds=seconds))
        return self._now

    def set(self, at: datetime) -> None:
        self._now = truncate_ms(at)
