"""URI grammar: parse/format round trips, extension resolution, completion."""

from __future__ import annotations

import random
import string

import pytest

from databrowse.datasource import default_registry
from databrowse.uri import (DataSetURI, UriError, complete, format_uri,
                            implicit_extension, parse_uri, validate)
from databrowse.vfs import Vfs


@pytest.fixture
def registry():
    return default_registry()


def test_parse_full_example():
    d = parse_uri("vap+dat:file:///home/user/myfile.asc?delim=comma&skip=5")
    assert d.explicit_ext == "dat"
    assert d.resource == "file:///home/user/myfile.asc"
    assert d.params == (("delim", "comma"), ("skip", "5"))


def test_parse_principal_parameter():
    d = parse_uri("http://example.org/data/sample.cdf?BGSM")
    assert d.explicit_ext is None
    assert d.principal == "BGSM"


def test_parse_no_params():
    d = parse_uri("file:///a.csv")
    assert d.params == ()
    assert d.principal is None


def test_parse_rejects_malformed_prefix():
    with pytest.raises(UriError):
        parse_uri("vap+:file:///x.csv")


def test_parse_rejects_empty():
    with pytest.raises(UriError):
        parse_uri("")
    with pytest.raises(UriError):
        parse_uri("vap+dat:?x=1")


def test_format_parse_round_trip_canonical():
    for text in (
        "vap+dat:file:///home/user/myfile.asc?delim=comma&skip=5",
        "file:///a.csv",
        "http://example.org/f.qds?name",
        "vap+dat:file:///tree/$Y/f_$Y$m$d_v...cdf?Np&timerange=2008-June",
    ):
        assert format_uri(parse_uri(text)) == text


def test_parse_format_round_trip_always():
    rng = random.Random(21)
    alphabet = string.ascii_letters + string.digits + " %&=?/:+."
    for _ in range(200):
        n_params = rng.randrange(0, 4)
        params = []
        for _ in range(n_params):
            name = "".join(rng.choice(string.ascii_lowercase) for _ in range(3))
            value = ("".join(rng.choice(alphabet) for _ in range(rng.randrange(0, 8)))
                     if rng.random() < 0.8 else None)
            params.append((name, value))
        d = DataSetURI("file:///fixture.csv", rng.choice([None, "dat"]),
                       tuple(params))
        assert parse_uri(format_uri(d)) == d


def test_percent_decoding():
    d = parse_uri("file:///x.csv?column=a%20b")
    assert d.get("column") == "a b"


def test_implicit_extension_from_filename(registry):
    assert implicit_extension(parse_uri("http://x/autoplot.cdf?BGSM"), registry) == "cdf"
    assert implicit_extension(parse_uri("file:///f.qds"), registry) == "qds"


def test_implicit_extension_alias_maps_to_plugin(registry):
    assert implicit_extension(parse_uri("file:///f.csv"), registry) == "dat"
    assert implicit_extension(parse_uri("file:///f.asc"), registry) == "dat"


def test_explicit_extension_wins(registry):
    d = parse_uri("vap+dat:file:///weird.bin")
    assert implicit_extension(d, registry) == "dat"


def test_no_extension_errors(registry):
    with pytest.raises(UriError):
        implicit_extension(parse_uri("http://x/data"), registry)


# -- validation ---------------------------------------------------------------

def test_validate_example_uri_clean(registry, ascii_file):
    d = parse_uri(f"vap+dat:file://{ascii_file}?delim=comma&skip=5")
    assert validate(d, registry) == []


def test_validate_non_integer_skip(registry):
    d = parse_uri("vap+dat:file:///x.csv?skip=abc")
    diags = validate(d, registry)
    assert len(diags) == 1 and diags[0].parameter == "skip"


def test_validate_unregistered_extension(registry):
    diags = validate(parse_uri("vap+nosuch:file:///x.nosuch"), registry)
    assert len(diags) == 1
    assert "nosuch" in diags[0].reason or "nosuch" in str(diags[0])


def test_validate_unknown_parameter(registry):
    diags = validate(parse_uri("file:///x.csv?bogus=1"), registry)
    assert any(d.parameter == "bogus" for d in diags)


def test_validate_timerange_parameter(registry):
    good = validate(parse_uri("file:///$Y.csv?timerange=2008-June"), registry)
    assert good == []
    bad = validate(parse_uri("file:///$Y.csv?timerange=nope"), registry)
    assert any(d.parameter == "timerange" for d in bad)


# -- completion ------------------------------------------------------------------

def test_complete_schemes(registry):
    got = [s.text for s in complete("va", registry)]
    assert "vap+dat:" in got and "vap+qds:" in got


def test_complete_empty_lists_schemes(registry):
    got = [s.text for s in complete("", registry)]
    assert "vap+dat:" in got


def test_complete_directory_children(registry, june_tree, local_vfs):
    partial = f"file://{june_tree}/"
    got = [s.label for s in complete(partial, registry, local_vfs)]
    assert got == ["2008/"]
    deeper = [s.label for s in complete(partial + "2008/ac_k0_swe_200806",
                                        registry, local_vfs)]
    assert len(deeper) == 30


def test_complete_parameter_names(registry, ascii_file, local_vfs):
    got = [s.label for s in complete(f"file://{ascii_file}?", registry, local_vfs)]
    assert "delim=" in got and "column=" in got


def test_complete_column_values(registry, ascii_file, local_vfs):
    got = [s.label for s in
           complete(f"file://{ascii_file}?skip=5&column=", registry, local_vfs)]
    assert got == ["time", "density", "speed"]
    # the value prefix narrows the suggestions
    narrowed = [s.label for s in
                complete(f"file://{ascii_file}?skip=5&column=d", registry, local_vfs)]
    assert narrowed == ["density"]


def test_complete_suggestions_lengthen_text(registry, ascii_file, local_vfs):
    for partial in ("va", f"file://{ascii_file}?", f"file://{ascii_file}?delim="):
        for s in complete(partial, registry, local_vfs):
            assert len(s.text) > len(partial)
            assert s.text.startswith(partial[:s.replace_from])
