"""Dataset model: construction, slicing, validity, units, arithmetic."""

from __future__ import annotations

import math
import random
from datetime import datetime, timezone

import numpy as np
import pytest

from databrowse import qdataset as qds
from databrowse.qdataset import (Datum, DataSetError, QDataSet, Units,
                                 UnitsError, add, convert, datasets_equal,
                                 dimensionality, divide, histogram,
                                 make_dataset, maximum, mean, minimum,
                                 multiply, rank, slice0, slice1, subtract,
                                 total, validity)

MS_1970 = Units("milliseconds since 1970-01-01T00:00")
DAYS_2000 = Units("days since 2000-01-01T00:00")


# -- construction -------------------------------------------------------------

def test_make_dataset_rank1_with_depend(np_dataset):
    assert rank(np_dataset) == 1
    assert np_dataset.shape == (288,)
    assert np_dataset.property(qds.LABEL) == "SW H Num Density"
    assert np_dataset.property(qds.UNITS) == "#/cc"


def test_make_dataset_scalar():
    ds = make_dataset(5.0)
    assert rank(ds) == 0
    assert ds.scalar() == 5.0


def test_make_dataset_rank2(electron_def_dataset):
    assert rank(electron_def_dataset) == 2
    assert electron_def_dataset.shape == (6260, 29)
    assert electron_def_dataset.property(qds.VALID_MAX) == 1.24e10


def test_make_dataset_rejects_rank4():
    with pytest.raises(DataSetError):
        make_dataset(np.zeros((2, 2, 2, 2)))


def test_make_dataset_rejects_depend_length_mismatch():
    dep = make_dataset(np.arange(3.0))
    with pytest.raises(DataSetError):
        make_dataset(np.arange(4.0), {qds.DEPEND_0: dep})


def test_make_dataset_rejects_bundle_with_depend1():
    dep1 = make_dataset(np.arange(3.0))
    bundle = qds.bundle_descriptor(["a", "b", "c"])
    with pytest.raises(DataSetError):
        make_dataset(np.zeros((4, 3)),
                     {qds.DEPEND_1: dep1, qds.BUNDLE_1: bundle})


def test_make_dataset_rejects_valid_min_above_max():
    with pytest.raises(DataSetError):
        make_dataset([1.0], {qds.VALID_MIN: 2.0, qds.VALID_MAX: 1.0})


def test_unknown_properties_preserved():
    ds = make_dataset([1.0], {"MY_TAG": "kept", qds.BASIS: "since 2009-10-04T00:00"})
    assert ds.property("MY_TAG") == "kept"
    assert ds.property(qds.BASIS) == "since 2009-10-04T00:00"


def test_values_are_immutable(np_dataset):
    with pytest.raises(ValueError):
        np_dataset.values[0] = 99.0


# -- dimensionality ------------------------------------------------------------

def test_dimensionality_fig_examples(np_dataset, electron_def_dataset, bgsm_dataset):
    assert dimensionality(np_dataset) == 2
    assert dimensionality(electron_def_dataset) == 3
    assert dimensionality(bgsm_dataset) == 4


# -- slicing --------------------------------------------------------------------

def test_slice0_spectrogram(electron_def_dataset):
    k = 1234
    s = slice0(electron_def_dataset, k)
    assert rank(s) == 1
    assert s.shape == (29,)
    dep0 = s.property(qds.DEPEND_0)
    assert dep0.property(qds.NAME) == "Energy"
    ctx = s.property(qds.CONTEXT_0)
    assert ctx is not None and ctx.rank == 0
    epoch = electron_def_dataset.property(qds.DEPEND_0)
    assert ctx.scalar() == epoch.values[k]
    assert np.array_equal(s.values, electron_def_dataset.values[k])


def test_slice0_rank1_gives_scalar_with_context(np_dataset):
    s = slice0(np_dataset, 0)
    assert rank(s) == 0
    ctx = s.property(qds.CONTEXT_0)
    assert ctx.scalar() == np_dataset.property(qds.DEPEND_0).values[0]


def test_slice0_of_scalar_errors():
    with pytest.raises(DataSetError):
        slice0(make_dataset(1.0), 0)


def test_slice0_out_of_bounds(np_dataset):
    with pytest.raises(IndexError):
        slice0(np_dataset, 288)


def test_slice0_bundle_carries_labels(bgsm_dataset):
    s = slice0(bgsm_dataset, 3)
    assert rank(s) == 1
    assert s.property(qds.BUNDLE_0) is not None
    assert qds.bundle_labels(s) == ["Bx (GSM)", "By (GSM)", "Bz (GSM)"]


def test_slice1_spectrogram(electron_def_dataset):
    m = 7
    s = slice1(electron_def_dataset, m)
    assert rank(s) == 1
    assert s.shape == (6260,)
    assert s.property(qds.DEPEND_0).property(qds.NAME) == "Epoch"
    ctx = s.property(qds.CONTEXT_0)
    energy = electron_def_dataset.property(qds.DEPEND_1)
    assert ctx.scalar() == energy.values[m]


def test_slice_order_commutes(electron_def_dataset):
    rng = random.Random(7)
    for _ in range(25):
        i = rng.randrange(6260)
        j = rng.randrange(29)
        a = slice0(slice1(electron_def_dataset, j), i)
        b = slice0(slice0(electron_def_dataset, i), j)
        assert a.scalar() == b.scalar() == electron_def_dataset.values[i, j]


def test_slice1_requires_qube(np_dataset):
    no_qube = make_dataset(np.zeros((4, 3)))
    with pytest.raises(DataSetError):
        slice1(no_qube, 1)


def test_reassembled_slices_reproduce_original(electron_def_dataset):
    rows = [slice0(electron_def_dataset, i).values for i in range(100)]
    assert np.array_equal(np.vstack(rows), electron_def_dataset.values[:100])


def test_rank_drop_invariant(bgsm_dataset):
    for i in range(len(bgsm_dataset)):
        assert rank(slice0(bgsm_dataset, i)) == rank(bgsm_dataset) - 1


def test_ragged_rank2_slice0_only():
    ds = make_dataset([[1.0, 2.0], [3.0, 4.0, 5.0]])
    assert ds.is_ragged and rank(ds) == 2
    row = slice0(ds, 1)
    assert row.shape == (3,)
    with pytest.raises(DataSetError):
        ds.values  # no regular array view


# -- validity ----------------------------------------------------------------

def test_validity_valid_max(electron_def_dataset):
    w = validity(electron_def_dataset)
    assert w[1000, 5] == 0.0  # 2.0e10 > VALID_MAX=1.24e10
    assert w[2000, 7] == 0.0  # -1.0 < VALID_MIN=0.0
    assert w[0, 0] == 1.0


def test_validity_no_properties_all_ones():
    ds = make_dataset([1.0, -5.0, 2e30])
    assert np.all(validity(ds) == 1.0)


def test_validity_fill_and_nan():
    ds = make_dataset([1.0, -1e31, math.nan], {qds.FILL_VALUE: -1e31})
    assert list(validity(ds)) == [1.0, 0.0, 0.0]


def test_validity_ignores_unrelated_properties():
    vals = [1.0, -1e31, 3.0]
    a = make_dataset(vals, {qds.FILL_VALUE: -1e31})
    b = make_dataset(vals, {qds.FILL_VALUE: -1e31, qds.LABEL: "x", "OPAQUE": "y"})
    assert np.array_equal(validity(a), validity(b))


# -- arithmetic -----------------------------------------------------------------

def _nt(values, **props):
    return make_dataset(values, {qds.UNITS: "nT", **props})


def test_add_same_units():
    out = add(_nt([3.0]), _nt([4.0]))
    assert out.values[0] == 7.0
    assert out.property(qds.UNITS) == "nT"


def test_add_incompatible_units():
    with pytest.raises(UnitsError):
        add(_nt([3.0]), make_dataset([4.0], {qds.UNITS: "eV"}))


def test_add_fill_absorbs():
    a = make_dataset([-1e31, 2.0], {qds.UNITS: "nT", qds.FILL_VALUE: -1e31})
    out = add(a, _nt([4.0, 4.0]))
    assert out.values[0] == -1e31  # fill survives as the result fill
    assert out.values[1] == 6.0
    assert validity(out)[0] == 0.0


def test_add_commutative_where_valid():
    rng = np.random.default_rng(3)
    av = rng.normal(size=50)
    bv = rng.normal(size=50)
    av[7] = -1e31
    a = make_dataset(av, {qds.UNITS: "nT", qds.FILL_VALUE: -1e31})
    b = make_dataset(bv, {qds.UNITS: "nT"})
    ab, ba = add(a, b), add(b, a)
    w = validity(ab)
    assert np.array_equal(ab.values[w > 0], ba.values[w > 0])


def test_add_shape_mismatch():
    with pytest.raises(DataSetError):
        add(_nt([1.0, 2.0]), _nt([1.0, 2.0, 3.0]))


def test_add_depend0_disagreement():
    dep_a = make_dataset([0.0, 1.0], {qds.UNITS: MS_1970.label})
    dep_b = make_dataset([0.0, 2.0], {qds.UNITS: MS_1970.label})
    a = make_dataset([1.0, 2.0], {qds.UNITS: "nT", qds.DEPEND_0: dep_a})
    b = make_dataset([1.0, 2.0], {qds.UNITS: "nT", qds.DEPEND_0: dep_b})
    with pytest.raises(DataSetError):
        add(a, b)


def test_add_rank0_broadcast():
    out = add(_nt([1.0, 2.0]), make_dataset(10.0, {qds.UNITS: "nT"}))
    assert list(out.values) == [11.0, 12.0]


def test_multiply_composes_unit_labels():
    out = multiply(_nt([3.0]), make_dataset([2.0], {qds.UNITS: "s"}))
    assert out.property(qds.UNITS) == "nT*s"
    out = divide(_nt([3.0]), make_dataset([2.0], {qds.UNITS: "s"}))
    assert out.property(qds.UNITS) == "nT/s"


# -- unit conversion ------------------------------------------------------------

def test_convert_days2000_to_ms1970_exact():
    # oracle: calendar day count 1970->2000 is 10957 days
    d0 = convert(Datum(0.0, DAYS_2000), MS_1970)
    assert d0.value == 946684800000.0
    d1 = convert(Datum(1.0, DAYS_2000), MS_1970)
    assert d1.value == 946771200000.0


def test_convert_identity_ratiometric():
    d = Datum(42.0, Units("nT"))
    assert convert(d, Units("nT")).value == 42.0


def test_convert_rejects_mixed_kinds():
    with pytest.raises(UnitsError):
        convert(Datum(1.0, Units("nT")), MS_1970)


def test_convert_round_trip_exact_integers():
    rng = random.Random(11)
    us = Units("microseconds since 2009-10-04T00:00")
    for _ in range(50):
        v = float(rng.randrange(-10_000, 10_000))
        d = Datum(v, DAYS_2000)
        back = convert(convert(d, us), DAYS_2000)
        assert back.value == v


# -- reductions -------------------------------------------------------------------

def test_mean_simple():
    assert mean(make_dataset([3.0, 4.0, 5.0])).scalar() == 4.0


def test_mean_excludes_fill():
    ds = make_dataset([3.0, -1e31, 5.0], {qds.FILL_VALUE: -1e31})
    assert mean(ds).scalar() == 4.0


def test_mean_all_fill_gives_fill():
    ds = make_dataset([-1e31, -1e31], {qds.FILL_VALUE: -1e31})
    out = mean(ds)
    assert out.rank == 0
    assert out.scalar() == -1e31
    assert out.property(qds.FILL_VALUE) == -1e31


def test_total_min_max():
    ds = make_dataset([3.0, -1e31, 5.0], {qds.FILL_VALUE: -1e31})
    assert total(ds).scalar() == 8.0
    assert minimum(ds).scalar() == 3.0
    assert maximum(ds).scalar() == 5.0


def test_reduction_context_records_extent(np_dataset):
    out = mean(np_dataset)
    ctx = out.property(qds.CONTEXT_0)
    dep = np_dataset.property(qds.DEPEND_0)
    assert ctx.values[0] == dep.values[0]
    assert ctx.values[1] == dep.values[-1]
    assert out.property(qds.UNITS) == "#/cc"


def test_histogram_counts():
    ds = make_dataset([1.0, 1.1, 2.0, 2.1, 2.2, -1e31], {qds.FILL_VALUE: -1e31})
    h = histogram(ds, bins=2)
    assert h.values.sum() == 5.0
    assert h.property(qds.DEPEND_0) is not None


# -- equality ----------------------------------------------------------------------

def test_datasets_equal_roundtrip_identity(bgsm_dataset):
    assert datasets_equal(bgsm_dataset, bgsm_dataset)
    other = bgsm_dataset.with_properties(LABEL="changed")
    assert not datasets_equal(bgsm_dataset, other)
