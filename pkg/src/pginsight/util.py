"""Shared helpers: hashing, identifier tokenization, calendar math, formatting."""

from __future__ import annotations

import re
from datetime import date, datetime, timedelta, timezone

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

_CAMEL_BOUNDARY = re.compile(r"(?<=[a-z0-9])(?=[A-Z])")
_NON_ALNUM = re.compile(r"[^0-9a-zA-Z]+")


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a over raw bytes, stable across processes."""
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def singularize(token: str) -> str:
    """Crude plural folding so 'users' and 'user' compare equal.

    Keeps -ss/-us/-is endings intact (address, status, analysis).
    """
    if len(token) > 4 and token.endswith("ies"):
        return token[:-3] + "y"
    if token.endswith(("ss", "us", "is")):
        return token
    if len(token) > 3 and token.endswith("s"):
        return token[:-1]
    return token


def split_identifier(identifier: str) -> list[str]:
    """Split snake_case or camelCase identifiers into lowercase parts."""
    spaced = _CAMEL_BOUNDARY.sub(" ", identifier)
    parts = _NON_ALNUM.split(spaced)
    return [p.lower() for p in parts if p]


def tokenize(text: str) -> set[str]:
    """Token bag of a phrase or identifier: split, lowercase, singularize."""
    return {singularize(p) for p in split_identifier(text)}


def humanize(identifier: str) -> str:
    """Identifier to display text: underscores and case boundaries to spaces."""
    return " ".join(split_identifier(identifier))


def levenshtein(a: str, b: str) -> int:
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def name_similarity(phrase: str, name: str) -> float:
    """1 minus length-normalized edit distance, on underscore-normalized text."""
    a = _NON_ALNUM.sub("_", phrase.strip().lower()).strip("_")
    b = _NON_ALNUM.sub("_", name.strip().lower()).strip("_")
    longest = max(len(a), len(b))
    if longest == 0:
        return 1.0
    return 1.0 - levenshtein(a, b) / longest


_DAYS_IN_MONTH = [31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31]


def _month_length(year: int, month: int) -> int:
    if month == 2 and (year % 4 == 0 and (year % 100 != 0 or year % 400 == 0)):
        return 29
    return _DAYS_IN_MONTH[month - 1]


def shift_months(dt: datetime, months: int) -> datetime:
    """Shift by calendar months, clamping the day to the target month's end.

    Jan 31 minus one month lands on Dec 31; Mar 31 minus one month on Feb 28/29.
    """
    total = dt.year * 12 + (dt.month - 1) + months
    year, month0 = divmod(total, 12)
    month = month0 + 1
    day = min(dt.day, _month_length(year, month))
    return dt.replace(year=year, month=month, day=day)


def utc(year: int, month: int, day: int, hour: int = 0, minute: int = 0, second: int = 0) -> datetime:
    return datetime(year, month, day, hour, minute, second, tzinfo=timezone.utc)


def iso_utc(dt: datetime) -> str:
    """Canonical ISO-8601 UTC form with trailing Z, whole-second precision."""
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    dt = dt.astimezone(timezone.utc)
    if dt.microsecond:
        return dt.strftime("%Y-%m-%dT%H:%M:%S.%fZ")
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_iso_utc(text: str) -> datetime:
    """Parse ISO-8601 text into an aware UTC datetime; bare dates become midnight."""
    cleaned = text.strip()
    if cleaned.endswith(("Z", "z")):
        cleaned = cleaned[:-1] + "+00:00"
    if " " in cleaned and "T" not in cleaned:
        cleaned = cleaned.replace(" ", "T", 1)
    parsed = datetime.fromisoformat(cleaned)
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return parsed.astimezone(timezone.utc)


def format_number(value: float | int) -> str:
    """Stable human formatting: integral values without a decimal point."""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, int):
        return str(value)
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return f"{value:.2f}"


def ensure_date(value: datetime | date) -> date:
    if isinstance(value, datetime):
        return value.date()
    return value
