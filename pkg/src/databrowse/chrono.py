"""Calendar arithmetic, the time-range grammar, and filename templates.

Everything here is UTC and half-open: an interval covers [start, end).
The template grammar is the one embedded in data-set URIs:

    $Y  four-digit year        $m  two-digit month
    $d  two-digit day          $H  two-digit hour
    ... version wildcard (any run of non-"/" characters); a single "."
        immediately after a literal ending in "_v" acts the same way

Fields may repeat (year in both directory and file name) and repeated
occurrences must agree for a name to match.
"""

from __future__ import annotations

import calendar
import re
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Iterator, Optional

__all__ = [
    "TimeInterval",
    "FileTemplate",
    "parse_timerange",
    "parse_instant",
    "parse_template",
    "format_template",
    "match_template",
    "enumerate_intervals",
    "TimeParseError",
]

UTC = timezone.utc
EPOCH_1970 = datetime(1970, 1, 1, tzinfo=UTC)


class TimeParseError(ValueError):
    """Text did not parse as a time range, instant, or template."""


@dataclass(frozen=True)
class TimeInterval:
    """Half-open UTC interval [start, end)."""

    start: datetime
    end: datetime

    def __post_init__(self):
        if self.start.tzinfo is None or self.end.tzinfo is None:
            raise TimeParseError("interval endpoints must be timezone-aware UTC")
        if not self.start < self.end:
            raise TimeParseError(f"interval start {self.start} >= end {self.end}")

    def intersects(self, other: "TimeInterval") -> bool:
        return self.start < other.end and other.start < self.end

    def contains(self, t: datetime) -> bool:
        return self.start <= t < self.end

    def clip(self, other: "TimeInterval") -> "TimeInterval":
        return TimeInterval(max(self.start, other.start), min(self.end, other.end))

    @property
    def start_ms(self) -> int:
        return _to_ms(self.start)

    @property
    def end_ms(self) -> int:
        return _to_ms(self.end)

    def iso(self) -> str:
        return f"{_iso(self.start)} to {_iso(self.end)}"

    def __str__(self) -> str:
        return self.iso()


def instant_to_ms(t: datetime) -> int:
    """Milliseconds since 1970-01-01T00:00Z."""
    d = t - EPOCH_1970
    return (d.days * 86_400 + d.seconds) * 1000 + d.microseconds // 1000


_to_ms = instant_to_ms


def _iso(t: datetime) -> str:
    if t.microsecond:
        return t.strftime("%Y-%m-%dT%H:%M:%S.") + f"{t.microsecond // 1000:03d}Z"
    if t.second:
        return t.strftime("%Y-%m-%dT%H:%M:%SZ")
    return t.strftime("%Y-%m-%dT%H:%MZ")


_MONTHS = {m.lower(): i for i, m in enumerate(calendar.month_name) if m}
_MONTHS.update({m.lower(): i for i, m in enumerate(calendar.month_abbr) if m})


def _month_number(word: str) -> Optional[int]:
    return _MONTHS.get(word.strip().lower())


def _add_months(t: datetime, n: int) -> datetime:
    month_index = (t.year * 12 + t.month - 1) + n
    year, month = divmod(month_index, 12)
    return t.replace(year=year, month=month + 1)


_ISO_RE = re.compile(
    r"^(\d{4})-(\d{2})-(\d{2})"
    r"(?:[T ](\d{2}):(\d{2})(?::(\d{2})(?:\.(\d{1,6}))?)?)?Z?$"
)
_DOY_RE = re.compile(r"^(\d{4})-(\d{3})(\.\d+)?$")


def parse_instant(text: str) -> datetime:
    """Parse one calendar instant: ISO date/datetime, year-month, or year."""
    t = text.strip()
    m = _ISO_RE.match(t)
    if m:
        y, mo, d = int(m.group(1)), int(m.group(2)), int(m.group(3))
        hh = int(m.group(4) or 0)
        mm = int(m.group(5) or 0)
        ss = int(m.group(6) or 0)
        frac = (m.group(7) or "").ljust(6, "0")
        us = int(frac) if m.group(7) else 0
        try:
            return datetime(y, mo, d, hh, mm, ss, us, tzinfo=UTC)
        except ValueError as e:
            raise TimeParseError(f"invalid calendar instant {text!r}: {e}") from None
    m = _DOY_RE.match(t)
    if m:
        base = datetime(int(m.group(1)), 1, 1, tzinfo=UTC)
        doy = int(m.group(2)) - 1
        frac_days = float(m.group(3) or 0.0)
        return base + timedelta(days=doy + frac_days)
    unit = _parse_calendar_unit(t)
    if unit is not None:
        return unit.start
    raise TimeParseError(f"unparseable instant: {text!r}")


def _parse_calendar_unit(text: str) -> Optional[TimeInterval]:
    """A named calendar unit expanded to its full interval, or None."""
    t = text.strip()
    if re.fullmatch(r"\d{4}", t):
        y = int(t)
        return TimeInterval(datetime(y, 1, 1, tzinfo=UTC), datetime(y + 1, 1, 1, tzinfo=UTC))
    m = re.fullmatch(r"(\d{4})-(\d{2})", t)
    if m:
        start = datetime(int(m.group(1)), int(m.group(2)), 1, tzinfo=UTC)
        return TimeInterval(start, _add_months(start, 1))
    m = re.fullmatch(r"(\d{4})[-\s]+([A-Za-z]+)", t)
    if m and _month_number(m.group(2)):
        start = datetime(int(m.group(1)), _month_number(m.group(2)), 1, tzinfo=UTC)
        return TimeInterval(start, _add_months(start, 1))
    m = re.fullmatch(r"([A-Za-z]+)[-\s]+(\d{4})", t)
    if m and _month_number(m.group(1)):
        start = datetime(int(m.group(2)), _month_number(m.group(1)), 1, tzinfo=UTC)
        return TimeInterval(start, _add_months(start, 1))
    m = re.fullmatch(r"(\d{4})-(\d{2})-(\d{2})", t)
    if m:
        start = datetime(int(m.group(1)), int(m.group(2)), int(m.group(3)), tzinfo=UTC)
        return TimeInterval(start, start + timedelta(days=1))
    return None


def parse_timerange(text: str) -> TimeInterval:
    """Parse a time range: "2008-June", "June 2008", ISO dates, "A to B"."""
    if not text or not text.strip():
        raise TimeParseError("empty time range")
    t = text.strip()
    parts = re.split(r"\s+to\s+", t, maxsplit=1, flags=re.IGNORECASE)
    if len(parts) == 2:
        start = parse_instant(parts[0])
        end = parse_instant(parts[1])
        return TimeInterval(start, end)
    unit = _parse_calendar_unit(t)
    if unit is not None:
        return unit
    # a bare instant with sub-day precision covers one unit of its finest field
    instant = parse_instant(t)
    if instant.second or instant.microsecond:
        return TimeInterval(instant, instant + timedelta(seconds=1))
    if instant.minute or instant.hour:
        return TimeInterval(instant, instant + timedelta(minutes=1))
    return TimeInterval(instant, instant + timedelta(days=1))


# ---------------------------------------------------------------------------
# Filename templates
# ---------------------------------------------------------------------------

_FIELD_DIGITS = {"Y": 4, "m": 2, "d": 2, "H": 2}
# coarse-to-fine, for deciding the interval a match implies
_FIELD_ORDER = ("Y", "m", "d", "H")


@dataclass(frozen=True)
class _Token:
    kind: str  # "literal" | "field" | "wildcard"
    text: str  # literal text or field code


@dataclass(frozen=True)
class FileTemplate:
    """Tokenized filename template with calendar fields and wildcards."""

    source: str
    tokens: tuple

    @property
    def fields(self) -> tuple:
        return tuple(t.text for t in self.tokens if t.kind == "field")

    @property
    def has_fields(self) -> bool:
        return any(t.kind == "field" for t in self.tokens)

    @property
    def has_wildcards(self) -> bool:
        return any(t.kind == "wildcard" for t in self.tokens)

    def finest_field(self) -> Optional[str]:
        present = set(self.fields)
        finest = None
        for code in _FIELD_ORDER:
            if code in present:
                finest = code
        return finest


def parse_template(text: str) -> FileTemplate:
    tokens: list[_Token] = []
    lit: list[str] = []

    def flush():
        if lit:
            tokens.append(_Token("literal", "".join(lit)))
            lit.clear()

    i = 0
    while i < len(text):
        c = text[i]
        if c == "$" and i + 1 < len(text) and text[i + 1] in _FIELD_DIGITS:
            flush()
            tokens.append(_Token("field", text[i + 1]))
            i += 2
        elif text.startswith("...", i):
            flush()
            tokens.append(_Token("wildcard", "..."))
            i += 3
        elif c == "." and "".join(lit).endswith("_v"):
            # lone "." after "_v" matches any version run
            flush()
            tokens.append(_Token("wildcard", "."))
            i += 1
        else:
            lit.append(c)
            i += 1
    flush()
    return FileTemplate(text, tuple(tokens))


def format_template(template: "FileTemplate | str", instant: datetime) -> str:
    """Substitute calendar fields, zero-padded. Wildcards are an error."""
    t = parse_template(template) if isinstance(template, str) else template
    if t.has_wildcards:
        raise TimeParseError(
            f"template {t.source!r} contains wildcards; a concrete name is required")
    out = []
    values = {"Y": instant.year, "m": instant.month, "d": instant.day, "H": instant.hour}
    for tok in t.tokens:
        if tok.kind == "literal":
            out.append(tok.text)
        else:
            out.append(f"{values[tok.text]:0{_FIELD_DIGITS[tok.text]}d}")
    return "".join(out)


def match_template(template: "FileTemplate | str", name: str) -> Optional[TimeInterval]:
    """Match a name against the template; the interval of the finest field.

    Repeated fields must agree. The wildcard matches any run of non-"/"
    characters. A non-match returns None.
    """
    t = parse_template(template) if isinstance(template, str) else template
    pattern = []
    group_fields = []
    for tok in t.tokens:
        if tok.kind == "literal":
            pattern.append(re.escape(tok.text))
        elif tok.kind == "field":
            pattern.append(f"(\\d{{{_FIELD_DIGITS[tok.text]}}})")
            group_fields.append(tok.text)
        else:
            pattern.append(r"[^/]*")
    m = re.fullmatch("".join(pattern), name)
    if not m:
        return None
    values: dict[str, int] = {}
    for code, text in zip(group_fields, m.groups()):
        v = int(text)
        if code in values and values[code] != v:
            return None
        values[code] = v
    if "Y" not in values:
        return None
    finest = t.finest_field()
    start_args = {
        "year": values["Y"],
        "month": values.get("m", 1),
        "day": values.get("d", 1),
        "hour": values.get("H", 0),
    }
    try:
        start = datetime(tzinfo=UTC, **start_args)
    except ValueError:
        return None
    if finest == "Y":
        end = start.replace(year=start.year + 1)
    elif finest == "m":
        end = _add_months(start, 1)
    elif finest == "d":
        end = start + timedelta(days=1)
    else:
        end = start + timedelta(hours=1)
    return TimeInterval(start, end)


# ---------------------------------------------------------------------------
# Calendar enumeration
# ---------------------------------------------------------------------------

_CADENCES = ("hour", "day", "month", "year")


def _align_down(t: datetime, cadence: str) -> datetime:
    if cadence == "hour":
        return t.replace(minute=0, second=0, microsecond=0)
    if cadence == "day":
        return t.replace(hour=0, minute=0, second=0, microsecond=0)
    if cadence == "month":
        return t.replace(day=1, hour=0, minute=0, second=0, microsecond=0)
    return t.replace(month=1, day=1, hour=0, minute=0, second=0, microsecond=0)


def _step(t: datetime, cadence: str) -> datetime:
    if cadence == "hour":
        return t + timedelta(hours=1)
    if cadence == "day":
        return t + timedelta(days=1)
    if cadence == "month":
        return _add_months(t, 1)
    return t.replace(year=t.year + 1)


def enumerate_intervals(rng: TimeInterval, cadence: str) -> list[TimeInterval]:
    """Calendar-aligned intervals tiling the range; boundary ones clipped."""
    if cadence not in _CADENCES:
        raise TimeParseError(f"unknown cadence {cadence!r}; use one of {_CADENCES}")
    out: list[TimeInterval] = []
    cursor = _align_down(rng.start, cadence)
    while cursor < rng.end:
        nxt = _step(cursor, cadence)
        out.append(TimeInterval(max(cursor, rng.start), min(nxt, rng.end)))
        cursor = nxt
    return out
