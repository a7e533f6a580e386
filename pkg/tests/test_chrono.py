"""Time-range grammar, filename templates, calendar enumeration."""

from __future__ import annotations

import random
import re
from datetime import datetime, timedelta, timezone

import pytest

from databrowse.chrono import (TimeInterval, TimeParseError,
                               enumerate_intervals, format_template,
                               match_template, parse_template,
                               parse_timerange)

UTC = timezone.utc


def _interval(y0, m0, d0, y1, m1, d1):
    return TimeInterval(datetime(y0, m0, d0, tzinfo=UTC),
                        datetime(y1, m1, d1, tzinfo=UTC))


# -- parse_timerange -----------------------------------------------------------

def test_year_month_name():
    assert parse_timerange("2008-June") == _interval(2008, 6, 1, 2008, 7, 1)


def test_month_name_year():
    assert parse_timerange("June 2008") == parse_timerange("2008-June")


def test_explicit_to_range():
    assert (parse_timerange("2008-06-01 to 2008-06-15")
            == _interval(2008, 6, 1, 2008, 6, 15))


def test_all_three_june_forms_identical():
    forms = ["2008-June", "June 2008", "2008-06-01 to 2008-07-01"]
    parsed = [parse_timerange(f) for f in forms]
    assert parsed[0] == parsed[1] == parsed[2]


def test_abbreviated_month_and_iso_month():
    assert parse_timerange("Jun 2008") == parse_timerange("2008-06")


def test_bare_year():
    assert parse_timerange("2008") == _interval(2008, 1, 1, 2009, 1, 1)


def test_bare_date_is_day_interval():
    assert parse_timerange("2008-06-05") == _interval(2008, 6, 5, 2008, 6, 6)


def test_datetime_endpoints():
    rng = parse_timerange("2008-06-05T06:00 to 2008-06-05T18:00")
    assert rng.start == datetime(2008, 6, 5, 6, tzinfo=UTC)
    assert rng.end == datetime(2008, 6, 5, 18, tzinfo=UTC)


def test_reversed_range_rejected():
    with pytest.raises(TimeParseError):
        parse_timerange("2008-07-01 to 2008-06-01")


def test_unparseable_rejected():
    with pytest.raises(TimeParseError):
        parse_timerange("not a time")
    with pytest.raises(TimeParseError):
        parse_timerange("")


# -- format_template ------------------------------------------------------------

def test_format_substitutes_fields():
    t = datetime(2008, 6, 5, tzinfo=UTC)
    assert (format_template("$Y/ac_k0_swe_$Y$m$d.cdf", t)
            == "2008/ac_k0_swe_20080605.cdf")


def test_format_literal_passthrough():
    t = datetime(2008, 6, 5, tzinfo=UTC)
    assert format_template("plain.txt", t) == "plain.txt"


def test_format_zero_pads():
    t = datetime(2008, 1, 2, tzinfo=UTC)
    assert format_template("$Y$m$d", t) == "20080102"


def test_format_rejects_wildcards():
    t = datetime(2008, 1, 2, tzinfo=UTC)
    with pytest.raises(TimeParseError):
        format_template("f_$Y$m$d_v...cdf", t)


# -- match_template ---------------------------------------------------------------

def test_match_version_wildcard_day():
    got = match_template("ac_k0_swe_$Y$m$d_v...cdf", "ac_k0_swe_20080605_v02.cdf")
    assert got == _interval(2008, 6, 5, 2008, 6, 6)


def test_match_missing_day_digits():
    assert match_template("ac_k0_swe_$Y$m$d_v...cdf",
                          "ac_k0_swe_200806_v02.cdf") is None


def test_match_repeated_field_must_agree():
    assert match_template("$Y/$Y$m$d.dat", "2008/20090605.dat") is None
    assert (match_template("$Y/$Y$m$d.dat", "2008/20080605.dat")
            == _interval(2008, 6, 5, 2008, 6, 6))


def test_match_single_dot_after_v_is_wildcard():
    assert (match_template("f_$Y$m$d_v.cdf", "f_20080605_v12.cdf")
            == _interval(2008, 6, 5, 2008, 6, 6))


def test_match_month_granularity():
    got = match_template("data_$Y$m.txt", "data_200806.txt")
    assert got == _interval(2008, 6, 1, 2008, 7, 1)


def test_match_against_regex_oracle():
    """Brute-force regular-expression oracle over generated names."""
    template = "ac_k0_swe_$Y$m$d_v...cdf"
    oracle = re.compile(r"^ac_k0_swe_(\d{4})(\d{2})(\d{2})_v[^/]*cdf$")
    rng = random.Random(5)
    for _ in range(200):
        y = rng.randrange(1990, 2030)
        m = rng.randrange(1, 13)
        d = rng.randrange(1, 29)
        version = rng.choice(["01.", "2.", "12345.", "."])
        name = f"ac_k0_swe_{y:04d}{m:02d}{d:02d}_v{version}cdf"
        mo = oracle.match(name)
        got = match_template(template, name)
        assert (got is not None) == (mo is not None)
        if got:
            assert got.start == datetime(y, m, d, tzinfo=UTC)


def test_match_format_round_trip():
    rng = random.Random(9)
    template = "$Y/x_$Y$m$d_$H.dat"
    for _ in range(100):
        t = datetime(2000, 1, 1, tzinfo=UTC) + timedelta(
            hours=rng.randrange(0, 24 * 365 * 20))
        name = format_template(template, t)
        interval = match_template(template, name)
        assert interval is not None and interval.contains(t)


# -- enumerate_intervals -------------------------------------------------------------

def test_enumerate_june_days():
    out = enumerate_intervals(parse_timerange("2008-June"), "day")
    assert len(out) == 30
    assert out[0].start == datetime(2008, 6, 1, tzinfo=UTC)
    assert out[-1].end == datetime(2008, 7, 1, tzinfo=UTC)


def test_enumerate_single_day_identity():
    rng = parse_timerange("2008-06-05")
    assert enumerate_intervals(rng, "day") == [rng]


def test_enumerate_months_clipped():
    rng = parse_timerange("2008-06-15 to 2008-08-15")
    out = enumerate_intervals(rng, "month")
    assert len(out) == 3
    assert out[0] == _interval(2008, 6, 15, 2008, 7, 1)
    assert out[1] == _interval(2008, 7, 1, 2008, 8, 1)
    assert out[2] == _interval(2008, 8, 1, 2008, 8, 15)


def test_enumerate_tiles_exactly():
    rng_src = random.Random(13)
    for cadence in ("hour", "day", "month", "year"):
        for _ in range(20):
            start = datetime(2007, 1, 1, tzinfo=UTC) + timedelta(
                minutes=rng_src.randrange(0, 60 * 24 * 700))
            end = start + timedelta(minutes=rng_src.randrange(1, 60 * 24 * 90))
            rng = TimeInterval(start, end)
            tiles = enumerate_intervals(rng, cadence)
            assert tiles[0].start == rng.start
            assert tiles[-1].end == rng.end
            for a, b in zip(tiles, tiles[1:]):
                assert a.end == b.start  # disjoint and gap-free
