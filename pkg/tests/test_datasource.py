"""Plug-ins: ASCII tables, the interchange format, exporters, registry."""

from __future__ import annotations

import math

import numpy as np
import pytest

from databrowse import qdataset as qds
from databrowse.datasource import (ReadError, about_plugins, default_registry,
                                   read_ascii, read_dataset, read_qds,
                                   write_csv, write_qds)
from databrowse.qdataset import datasets_equal, make_dataset
from databrowse.uri import parse_uri


@pytest.fixture
def registry():
    return default_registry()


# -- registry ------------------------------------------------------------------

def test_resolve_explicit_dat(registry):
    d = parse_uri("vap+dat:file:///home/user/myfile.asc?delim=comma&skip=5")
    assert registry.resolve(d).id == "dat"


def test_resolve_qds_by_extension(registry):
    assert registry.resolve(parse_uri("file:///x.qds")).id == "qds"


def test_resolve_unknown_lists_known(registry):
    with pytest.raises(ReadError) as e:
        registry.resolve(parse_uri("file:///x.zzz"))
    msg = str(e.value)
    assert "dat" in msg and "qds" in msg


def test_about_plugins_listing(registry):
    listing = about_plugins(registry)
    lines = listing.splitlines()
    assert len(lines) == 2
    assert lines[0].startswith("dat")
    assert "csv" in lines[0]
    assert lines[1].startswith("qds")


def test_alias_csv_maps_to_dat(registry):
    assert registry.canonical_extension("csv") == "dat"


# -- ascii plug-in ----------------------------------------------------------------

def test_read_ascii_skip_header_column(ascii_file):
    ds = read_ascii(ascii_file, {"delim": "comma", "skip": "5", "column": "density"})
    assert ds.shape == (12,)
    assert ds.values[0] == 2.0 and ds.values[11] == 7.5
    assert ds.property(qds.NAME) == "density"
    dep0 = ds.property(qds.DEPEND_0)
    assert dep0 is not None
    assert dep0.units.is_time_location


def test_read_ascii_column_by_index(ascii_file):
    ds = read_ascii(ascii_file, {"skip": "5", "column": "2"})
    assert ds.property(qds.NAME) == "speed"
    assert ds.values[0] == 400.0


def test_read_ascii_287_rows(rows287_file):
    ds = read_ascii(rows287_file, {"column": "data"})
    assert ds.shape == (287,)


def test_read_ascii_single_column_no_params(tmp_path):
    p = tmp_path / "one.csv"
    p.write_text("3.0\n4.0\n5.0\n")
    ds = read_ascii(p, {})
    assert list(ds.values) == [3.0, 4.0, 5.0]
    assert ds.property(qds.DEPEND_0) is None
    assert ds.property(qds.NAME) == "field0"


def test_read_ascii_ragged_row_reports_line(tmp_path):
    p = tmp_path / "ragged.csv"
    p.write_text("a,b\n1,2\n3\n4,5\n")
    with pytest.raises(ReadError) as e:
        read_ascii(p, {})
    assert "line 3" in str(e.value)


def test_read_ascii_unknown_column(ascii_file):
    with pytest.raises(ReadError) as e:
        read_ascii(ascii_file, {"skip": "5", "column": "nope"})
    assert "density" in str(e.value)  # lists available columns


def test_read_ascii_fill_parameter(tmp_path):
    p = tmp_path / "fill.csv"
    p.write_text("v\n1.0\n-999\n3.0\n")
    ds = read_ascii(p, {"column": "v", "fill": "-999"})
    assert ds.property(qds.FILL_VALUE) == -999.0
    assert list(qds.validity(ds)) == [1.0, 0.0, 1.0]


def test_read_ascii_empty_cell_is_missing(tmp_path):
    p = tmp_path / "gap.csv"
    p.write_text("a,b\n1,2\n,4\n5,6\n")
    ds = read_ascii(p, {"column": "a"})
    assert math.isnan(ds.values[1])


def test_read_ascii_bundle(tmp_path):
    p = tmp_path / "vec.csv"
    p.write_text("t,bx,by,bz\n2008-06-01T00:00,1,2,3\n2008-06-01T01:00,4,5,6\n")
    ds = read_ascii(p, {"bundle": "bx,by,bz"})
    assert ds.shape == (2, 3)
    assert qds.bundle_labels(ds) == ["bx", "by", "bz"]
    assert ds.property(qds.DEPEND_0) is not None


def test_read_ascii_whitespace_delim(tmp_path):
    p = tmp_path / "ws.txt"
    p.write_text("x   y\n1   2\n3     4\n")
    ds = read_ascii(p, {"delim": "whitespace", "column": "y"})
    assert list(ds.values) == [2.0, 4.0]


def test_read_ascii_crlf_and_trailing_blanks(tmp_path):
    a = tmp_path / "lf.csv"
    b = tmp_path / "crlf.csv"
    body = "v\n1\n2\n3\n"
    a.write_text(body)
    b.write_bytes(body.replace("\n", "\r\n").encode() + b"\r\n\r\n")
    da = read_ascii(a, {"column": "v"})
    db = read_ascii(b, {"column": "v"})
    assert np.array_equal(da.values, db.values)


def test_read_ascii_no_numeric_rows(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("header,line\n")
    with pytest.raises(ReadError):
        read_ascii(p, {})


# -- interchange plug-in --------------------------------------------------------

def test_qds_round_trip_rank1(np_dataset):
    blob = write_qds(np_dataset)
    back = read_qds(blob)
    assert datasets_equal(np_dataset, back)


def test_qds_round_trip_spectrogram(electron_def_dataset):
    back = read_qds(write_qds(electron_def_dataset))
    assert datasets_equal(electron_def_dataset, back)


def test_qds_round_trip_bundle(bgsm_dataset):
    back = read_qds(write_qds(bgsm_dataset))
    assert datasets_equal(bgsm_dataset, back)
    assert back.property(qds.VALID_MIN) == -65534.0
    assert back.property(qds.VALID_MAX) == 65534.0
    assert back.property(qds.UNITS) == "nT"
    assert back.property(qds.QUBE) is True


def test_qds_round_trip_rank0():
    ds = make_dataset(5.0, {qds.NAME: "answer", qds.UNITS: "eV"})
    back = read_qds(write_qds(ds))
    assert back.rank == 0 and back.scalar() == 5.0


def test_qds_non_finite_round_trip():
    ds = make_dataset([1.0, math.nan, math.inf])
    back = read_qds(write_qds(ds))
    assert back.values[0] == 1.0
    assert math.isnan(back.values[1])
    assert math.isnan(back.values[2])  # non-finite collapses to the fill literal


def test_qds_depend_length_mismatch_schema_error(tmp_path):
    doc = ('{"name": "x", "shape": [3], "values": [1, 2, 3], "properties": '
           '{"DEPEND_0": {"name": "t", "shape": [2], "values": [0, 1], '
           '"properties": {}}}}')
    p = tmp_path / "bad.qds"
    p.write_text(doc)
    with pytest.raises(ReadError) as e:
        read_qds(p)
    assert "DEPEND_0" in str(e.value)


def test_qds_bad_shape_declaration(tmp_path):
    p = tmp_path / "bad2.qds"
    p.write_text('{"name": "x", "shape": [4], "values": [1, 2, 3], "properties": {}}')
    with pytest.raises(ReadError) as e:
        read_qds(p)
    assert "shape" in str(e.value)


def test_qds_rank3_supported():
    ds = make_dataset(np.arange(24.0).reshape(2, 3, 4), {qds.QUBE: True})
    back = read_qds(write_qds(ds))
    assert back.shape == (2, 3, 4)
    assert np.array_equal(back.values, ds.values)


# -- exporters ----------------------------------------------------------------------

def test_write_csv_iso_times(np_dataset):
    text = write_csv(np_dataset).decode("utf-8")
    lines = text.strip().splitlines()
    assert lines[0] == "Epoch,Np"
    assert lines[1].startswith("2008-06-05T00:00:00Z,")
    assert len(lines) == 1 + 288


def test_write_csv_fill_is_empty_cell():
    ds = make_dataset([1.0, -1e31, 3.0],
                      {qds.NAME: "v", qds.FILL_VALUE: -1e31})
    lines = write_csv(ds).decode().strip().splitlines()
    assert lines[2] == ""  # fill row has an empty value cell
    assert lines[1] == "1.0" and lines[3] == "3.0"


def test_write_csv_rank3_unsupported():
    ds = make_dataset(np.zeros((2, 2, 2)), {qds.QUBE: True})
    with pytest.raises(ReadError):
        write_csv(ds)
    write_qds(ds)  # interchange still fine


def test_write_csv_bundle_headers(bgsm_dataset):
    lines = write_csv(bgsm_dataset).decode().strip().splitlines()
    assert lines[0] == "Time,Bx (GSM),By (GSM),Bz (GSM)"


def test_csv_reimports_via_ascii_reader(tmp_path, np_dataset):
    p = tmp_path / "round.csv"
    p.write_bytes(write_csv(np_dataset))
    back = read_ascii(p, {"column": "Np"})
    assert np.allclose(back.values, np_dataset.values)
    dep = back.property(qds.DEPEND_0)
    orig = np_dataset.property(qds.DEPEND_0)
    assert np.array_equal(dep.values, orig.values)


# -- front door -----------------------------------------------------------------------

def test_read_dataset_dispatch(registry, tmp_path, bgsm_dataset):
    p = tmp_path / "b.qds"
    p.write_bytes(write_qds(bgsm_dataset))
    ds = read_dataset(f"file://{p}", registry, p)
    assert datasets_equal(ds, bgsm_dataset)


def test_read_dataset_principal_is_column(registry, ascii_file):
    ds = read_dataset(f"file://{ascii_file}?density&skip=5", registry, ascii_file)
    assert ds.property(qds.NAME) == "density"
