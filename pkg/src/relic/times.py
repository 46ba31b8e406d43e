"""Timestamp conventions: integer epoch-milliseconds with two sentinels.

NEG_INF marks rows of tables without a time column (dimension rows, visible
in every snapshot). POS_INF marks rows whose time value failed to parse or
was null: an event with unknown time must never become visible, or snapshot
guarantees break.
"""

from __future__ import annotations

from datetime import date, datetime, timezone

import numpy as np

NEG_INF = np.iinfo(np.int64).min
POS_INF = np.iinfo(np.int64).max

MS_PER_HOUR = 3_600_000
MS_PER_DAY = 86_400_000


def parse_timestamp(value) -> int:
    """ISO-8601 date/datetime (or datetime object) -> epoch milliseconds, UTC."""
    if isinstance(value, datetime):
        dt = value
    elif isinstance(value, date):
        dt = datetime(value.year, value.month, value.day)
    elif isinstance(value, (int, np.integer)):
        return int(value)
    elif isinstance(value, str):
        text = value.strip()
        if not text:
            raise ValueError("empty timestamp")
        if text.endswith("Z"):
            text = text[:-1] + "+00:00"
        dt = datetime.fromisoformat(text)
    else:
        raise ValueError(f"cannot interpret {value!r} as a timestamp")
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp() * 1000)


def format_timestamp(ms: int) -> str:
    if ms == NEG_INF:
        return "-inf"
    if ms == POS_INF:
        return "+inf"
    dt = datetime.fromtimestamp(ms / 1000, tz=timezone.utc)
    return dt.strftime("%Y-%m-%dT%H:%M:%S.%f")[:-3] + "Z"
