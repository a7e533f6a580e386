"""Self-describing array model: immutable 0-3 index arrays with a property map.

A dataset couples a float64 array with properties that describe how its
indices are used.  DEPEND_k names another dataset tagging index k (time
tags, energy channels), BUNDLE_1 ties heterogeneous components (Bx, By,
Bz) along index 1, BINS_1 marks index 1 as interval boundaries, and QUBE
asserts index regularity so any index may be sliced.  Slicing reduces
rank and retains the sliced-at value as CONTEXT so provenance survives
the reduction.

All values are stored as float64.  Datasets are immutable: every
operation returns a new dataset and arrays are exposed read-only.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "QDataSet",
    "Units",
    "Datum",
    "DatumRange",
    "make_dataset",
    "rank",
    "dimensionality",
    "slice0",
    "slice1",
    "validity",
    "add",
    "subtract",
    "multiply",
    "divide",
    "convert",
    "convert_values",
    "total",
    "mean",
    "minimum",
    "maximum",
    "histogram",
    "bundle_labels",
    "bundle_descriptor",
    "KNOWN_KEYS",
]

# Property keys understood by operations in this package.  Unknown keys
# are carried through untouched as opaque text pairs.
NAME = "NAME"
LABEL = "LABEL"
TITLE = "TITLE"
UNITS = "UNITS"
FILL_VALUE = "FILL_VALUE"
VALID_MIN = "VALID_MIN"
VALID_MAX = "VALID_MAX"
SCALE_TYPE = "SCALE_TYPE"
DEPEND_0 = "DEPEND_0"
DEPEND_1 = "DEPEND_1"
DEPEND_2 = "DEPEND_2"
BUNDLE_0 = "BUNDLE_0"
BUNDLE_1 = "BUNDLE_1"
BINS_1 = "BINS_1"
QUBE = "QUBE"
CONTEXT_0 = "CONTEXT_0"
CONTEXT_1 = "CONTEXT_1"
CONTEXT_2 = "CONTEXT_2"
BASIS = "BASIS"

KNOWN_KEYS = frozenset(
    {
        NAME,
        LABEL,
        TITLE,
        UNITS,
        FILL_VALUE,
        VALID_MIN,
        VALID_MAX,
        SCALE_TYPE,
        DEPEND_0,
        DEPEND_1,
        DEPEND_2,
        BUNDLE_0,
        BUNDLE_1,
        BINS_1,
        QUBE,
        CONTEXT_0,
        CONTEXT_1,
        CONTEXT_2,
        BASIS,
    }
)

_DATASET_VALUED = (DEPEND_0, DEPEND_1, DEPEND_2, BUNDLE_0, BUNDLE_1, BINS_1,
                   CONTEXT_0, CONTEXT_1, CONTEXT_2)


class DataSetError(ValueError):
    """Construction or operation violated a dataset contract."""


class UnitsError(DataSetError):
    """Operands have units that cannot be reconciled."""


# ---------------------------------------------------------------------------
# Units and Datum
# ---------------------------------------------------------------------------

# Integer microseconds per unit keeps time conversions exact: products and
# quotients of integer-representable values stay exact in float64.
_US_PER_UNIT = {
    "microseconds": 1,
    "milliseconds": 1_000,
    "seconds": 1_000_000,
    "days": 86_400_000_000,
}

_TIME_LABEL_RE = re.compile(
    r"^(microseconds|milliseconds|seconds|days)\s+since\s+(.+)$"
)


def _parse_epoch(text: str) -> datetime:
    t = text.strip()
    for fmt in (
        "%Y-%m-%dT%H:%M:%S.%f",
        "%Y-%m-%dT%H:%M:%S",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M:%S",
        "%Y-%m-%d %H:%M",
        "%Y-%m-%d",
    ):
        try:
            return datetime.strptime(t, fmt).replace(tzinfo=timezone.utc)
        except ValueError:
            continue
    raise UnitsError(f"unparseable epoch in unit label: {text!r}")


class Units:
    """A unit of measure: either ratiometric ("nT") or a time location.

    Time-location units are "<scale> since <epoch>"; two of them are
    always inter-convertible, and never convertible to a ratiometric
    unit.  Conversion is exact for integer-representable values because
    all scale factors are integer microsecond counts.
    """

    __slots__ = ("label", "epoch", "_us_per_unit")

    def __init__(self, label: str):
        self.label = label
        m = _TIME_LABEL_RE.match(label.strip())
        if m:
            self._us_per_unit = _US_PER_UNIT[m.group(1)]
            self.epoch = _parse_epoch(m.group(2))
        else:
            self._us_per_unit = None
            self.epoch = None

    @classmethod
    def lookup(cls, label: "str | Units") -> "Units":
        if isinstance(label, Units):
            return label
        return cls(str(label))

    @property
    def is_time_location(self) -> bool:
        return self.epoch is not None

    def convertible_to(self, other: "Units") -> bool:
        if self.is_time_location != other.is_time_location:
            return False
        if self.is_time_location:
            return True
        return self.label == other.label

    def epoch_offset_us(self, other: "Units") -> int:
        """Microseconds from `other`'s epoch to this unit's epoch."""
        delta = self.epoch - other.epoch
        return (delta.days * 86_400_000_000
                + delta.seconds * 1_000_000
                + delta.microseconds)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Units):
            return NotImplemented
        if self.is_time_location and other.is_time_location:
            return (self._us_per_unit == other._us_per_unit
                    and self.epoch == other.epoch)
        return self.label == other.label

    def __hash__(self) -> int:
        if self.is_time_location:
            return hash((self._us_per_unit, self.epoch))
        return hash(self.label)

    def __repr__(self) -> str:
        return f"Units({self.label!r})"

    def __str__(self) -> str:
        return self.label


DIMENSIONLESS = Units("")


def convert_values(values, from_units: Units, to_units: Units):
    """Affine-convert an array (or scalar) between convertible units."""
    from_units = Units.lookup(from_units)
    to_units = Units.lookup(to_units)
    if not from_units.convertible_to(to_units):
        raise UnitsError(
            f"cannot convert {from_units.label!r} to {to_units.label!r}")
    if not from_units.is_time_location:
        return values
    offset = from_units.epoch_offset_us(to_units)
    scale_from = from_units._us_per_unit
    scale_to = to_units._us_per_unit
    return (np.asarray(values, dtype=np.float64) * scale_from + offset) / scale_to


@dataclass(frozen=True)
class Datum:
    """A scalar bound to a unit."""

    value: float
    units: Units = DIMENSIONLESS

    def to(self, units: "Units | str") -> "Datum":
        units = Units.lookup(units)
        return Datum(float(convert_values(self.value, self.units, units)), units)

    def __str__(self) -> str:
        if self.units.is_time_location:
            return format_time_datum(self)
        if self.units.label:
            return f"{self.value} {self.units.label}"
        return str(self.value)

    def _comparable(self, other: "Datum") -> float:
        if not isinstance(other, Datum):
            raise TypeError("Datum comparisons require a Datum")
        return other.to(self.units).value

    def __lt__(self, other):
        return self.value < self._comparable(other)

    def __le__(self, other):
        return self.value <= self._comparable(other)

    def __gt__(self, other):
        return self.value > self._comparable(other)

    def __ge__(self, other):
        return self.value >= self._comparable(other)


def convert(value: Datum, target: "Units | str") -> Datum:
    """Convert a Datum to a target unit (exact for integer time values)."""
    return value.to(target)


@dataclass(frozen=True)
class DatumRange:
    """An ordered pair of values sharing one unit (axis ranges, time spans)."""

    minimum: float
    maximum: float
    units: Units = DIMENSIONLESS

    def __post_init__(self):
        if not (float(self.minimum) < float(self.maximum)):
            raise DataSetError(
                f"range minimum must be < maximum: {self.minimum} .. {self.maximum}")

    @property
    def span(self) -> float:
        return self.maximum - self.minimum

    def to(self, units: "Units | str") -> "DatumRange":
        units = Units.lookup(units)
        lo = float(convert_values(self.minimum, self.units, units))
        hi = float(convert_values(self.maximum, self.units, units))
        return DatumRange(lo, hi, units)

    def intersects(self, other: "DatumRange") -> bool:
        o = other.to(self.units)
        return o.minimum < self.maximum and self.minimum < o.maximum


def format_time_datum(d: Datum) -> str:
    """ISO-8601 rendering of a time-located Datum (millisecond precision)."""
    ms = float(convert_values(d.value, d.units, Units("milliseconds since 1970-01-01T00:00")))
    base = datetime(1970, 1, 1, tzinfo=timezone.utc) + timedelta(milliseconds=ms)
    out = base.strftime("%Y-%m-%dT%H:%M:%S")
    frac = round(ms - math.floor(ms / 1000.0) * 1000.0)
    if frac % 1000:
        out += f".{int(frac) % 1000:03d}"
    return out + "Z"


# ---------------------------------------------------------------------------
# QDataSet
# ---------------------------------------------------------------------------

def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


class QDataSet:
    """Immutable 0-3 index float64 array plus a property map.

    Use :func:`make_dataset` to construct one; the constructor validates
    the DEPEND/BUNDLE length contracts.  Ragged rank-2 data (rows of
    differing lengths) is representable but supports only ``len``,
    ``rank`` and :func:`slice0`.
    """

    __slots__ = ("_values", "_rows", "_props")

    def __init__(self, values, properties: Mapping | None = None):
        props = dict(properties) if properties else {}
        rows = None
        if isinstance(values, QDataSet):
            raise DataSetError("values must be an array, not a dataset")
        if _is_ragged(values):
            rows = [
                _freeze(np.asarray(row, dtype=np.float64)) for row in values
            ]
            if any(r.ndim != 1 for r in rows):
                raise DataSetError("ragged data must be a list of 1-index rows")
            arr = None
        else:
            arr = np.asarray(values, dtype=np.float64)
            if arr.ndim > 3:
                raise DataSetError(f"rank {arr.ndim} exceeds the rank-3 limit")
            arr = _freeze(arr.copy())
        self._values = arr
        self._rows = rows
        self._props = props
        _validate_properties(self)

    # -- shape ------------------------------------------------------------

    @property
    def is_ragged(self) -> bool:
        return self._rows is not None

    @property
    def rank(self) -> int:
        return 2 if self.is_ragged else self._values.ndim

    @property
    def shape(self) -> tuple:
        if self.is_ragged:
            return (len(self._rows),)
        return self._values.shape

    def __len__(self) -> int:
        if self.rank == 0:
            raise TypeError("rank-0 dataset has no length")
        return len(self._rows) if self.is_ragged else self._values.shape[0]

    @property
    def values(self) -> np.ndarray:
        if self.is_ragged:
            raise DataSetError("ragged dataset has no regular value array")
        return self._values

    def row(self, i: int) -> np.ndarray:
        return self._rows[i] if self.is_ragged else self._values[i]

    def scalar(self) -> float:
        if self.rank != 0:
            raise DataSetError("scalar() requires a rank-0 dataset")
        return float(self._values)

    # -- properties ---------------------------------------------------------

    @property
    def properties(self) -> Mapping:
        return MappingProxyType(self._props)

    @property
    def units(self) -> Units:
        u = self._props.get(UNITS)
        return Units.lookup(u) if u is not None else DIMENSIONLESS

    def property(self, key: str, default=None):
        """One property by key, or the default when absent."""
        return self._props.get(key, default)

    def with_properties(self, **updates) -> "QDataSet":
        """New dataset sharing values, with properties added/replaced."""
        props = dict(self._props)
        for k, v in updates.items():
            if v is None:
                props.pop(k, None)
            else:
                props[k] = v
        out = object.__new__(QDataSet)
        out._values = self._values
        out._rows = self._rows
        out._props = props
        _validate_properties(out)
        return out

    def __repr__(self) -> str:
        name = self._props.get(NAME, "")
        shape = "ragged" if self.is_ragged else "x".join(map(str, self.shape))
        return f"QDataSet({name or 'unnamed'}, rank={self.rank}, shape={shape or 'scalar'})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, QDataSet):
            return NotImplemented
        return datasets_equal(self, other)

    __hash__ = None


def _is_ragged(values) -> bool:
    if isinstance(values, np.ndarray):
        return False
    if not isinstance(values, (list, tuple)) or not values:
        return False
    lengths = []
    for row in values:
        if isinstance(row, (list, tuple, np.ndarray)):
            lengths.append(len(row))
        else:
            return False
    return len(set(lengths)) > 1


def _validate_properties(ds: QDataSet) -> None:
    props = ds._props
    if BUNDLE_1 in props and DEPEND_1 in props:
        raise DataSetError("BUNDLE_1 and DEPEND_1 are mutually exclusive")
    vmin, vmax = props.get(VALID_MIN), props.get(VALID_MAX)
    if vmin is not None and vmax is not None and float(vmin) > float(vmax):
        raise DataSetError(f"VALID_MIN {vmin} exceeds VALID_MAX {vmax}")
    for k, idx in ((DEPEND_0, 0), (DEPEND_1, 1), (DEPEND_2, 2)):
        dep = props.get(k)
        if dep is None:
            continue
        if not isinstance(dep, QDataSet):
            raise DataSetError(f"{k} must be a dataset")
        if idx >= ds.rank:
            raise DataSetError(f"{k} given for a rank-{ds.rank} dataset")
        if not ds.is_ragged and len(dep) != ds.shape[idx]:
            raise DataSetError(
                f"{k} length {len(dep)} != dataset length {ds.shape[idx]} along index {idx}")
        if ds.is_ragged and idx == 0 and len(dep) != len(ds._rows):
            raise DataSetError(f"{k} length {len(dep)} != row count {len(ds._rows)}")
    bundle = props.get(BUNDLE_1)
    if bundle is not None:
        if not isinstance(bundle, QDataSet):
            raise DataSetError("BUNDLE_1 must be a dataset")
        if ds.rank != 2:
            raise DataSetError("BUNDLE_1 requires a rank-2 dataset")
        if len(bundle) != ds.shape[1]:
            raise DataSetError(
                f"BUNDLE_1 of {len(bundle)} components != index-1 length {ds.shape[1]}")


def make_dataset(values, properties: Mapping | None = None) -> QDataSet:
    """Construct an immutable dataset, validating the property contracts."""
    return QDataSet(values, properties)


def bundle_descriptor(labels: Sequence[str], names: Sequence[str] | None = None) -> QDataSet:
    """Build a BUNDLE_1 descriptor for `n` components.

    The descriptor is a rank-1 dataset of component indices whose
    per-component labels ride along as LABEL_i / NAME_i text properties.
    """
    n = len(labels)
    props: dict = {NAME: "bundle"}
    for i, lab in enumerate(labels):
        props[f"LABEL_{i}"] = lab
    if names is not None:
        for i, nm in enumerate(names):
            props[f"NAME_{i}"] = nm
    return QDataSet(np.arange(n, dtype=np.float64), props)


def bundle_labels(ds: QDataSet) -> list:
    """Component labels of a bundled dataset (or its slice)."""
    desc = ds.property(BUNDLE_1) or ds.property(BUNDLE_0)
    if desc is None:
        raise DataSetError("dataset has no bundle descriptor")
    out = []
    for i in range(len(desc)):
        out.append(desc.property(f"LABEL_{i}")
                   or desc.property(f"NAME_{i}")
                   or f"component_{i}")
    return out


def rank(ds: QDataSet) -> int:
    return ds.rank


def dimensionality(ds: QDataSet) -> int:
    """Physical dimensions occupied: base 1 for the measured quantity,
    +1 per DEPEND_k, +0 per BINS_k, and BUNDLE_1 of n replaces the base."""
    bundle = ds.property(BUNDLE_1)
    base = len(bundle) if isinstance(bundle, QDataSet) else 1
    deps = sum(1 for k in (DEPEND_0, DEPEND_1, DEPEND_2) if ds.property(k) is not None)
    return base + deps


# ---------------------------------------------------------------------------
# Slicing
# ---------------------------------------------------------------------------

_SLICE_CARRY = (NAME, LABEL, TITLE, UNITS, FILL_VALUE, VALID_MIN, VALID_MAX,
                SCALE_TYPE, BASIS)


def _next_context_key(props: Mapping) -> str:
    for k in (CONTEXT_0, CONTEXT_1, CONTEXT_2):
        if k not in props:
            return k
    raise DataSetError("no free CONTEXT slot (three slices already recorded)")


def _carry_props(ds: QDataSet) -> dict:
    out = {}
    for k, v in ds._props.items():
        if k in _SLICE_CARRY or k.startswith("CONTEXT_") or k not in KNOWN_KEYS:
            out[k] = v
    return out


def slice0(ds: QDataSet, i: int) -> QDataSet:
    """Slice along index 0: rank drops by one, DEPEND_0[i] becomes CONTEXT."""
    if ds.rank < 1:
        raise DataSetError("cannot slice a rank-0 dataset")
    n = len(ds)
    if not 0 <= i < n:
        raise IndexError(f"slice0 index {i} out of bounds for length {n}")
    props = _carry_props(ds)
    dep0 = ds.property(DEPEND_0)
    if dep0 is not None:
        props[_next_context_key(props)] = slice_point(dep0, i)
    dep1 = ds.property(DEPEND_1)
    if dep1 is not None:
        props[DEPEND_0] = dep1
    dep2 = ds.property(DEPEND_2)
    if dep2 is not None:
        props[DEPEND_1] = dep2
    bundle = ds.property(BUNDLE_1)
    if bundle is not None:
        props[BUNDLE_0] = bundle
    if ds.property(BINS_1) is not None:
        props["BINS_0"] = ds.property(BINS_1)
    if ds.property(QUBE) and ds.rank - 1 >= 2:
        props[QUBE] = ds.property(QUBE)
    return QDataSet(ds.row(i), props)


def slice_point(ds: QDataSet, i: int) -> QDataSet:
    """Rank-0 dataset holding element i with the source's unit metadata."""
    props = {k: ds._props[k] for k in (NAME, LABEL, UNITS) if k in ds._props}
    return QDataSet(float(ds.values[i]), props)


def slice1(ds: QDataSet, j: int) -> QDataSet:
    """Slice along index 1; requires the QUBE regularity property."""
    if ds.rank < 2:
        raise DataSetError("slice1 requires rank >= 2")
    if ds.is_ragged or not ds.property(QUBE):
        raise DataSetError("slice1 requires a QUBE-regular dataset")
    if not 0 <= j < ds.shape[1]:
        raise IndexError(f"slice1 index {j} out of bounds for length {ds.shape[1]}")
    props = _carry_props(ds)
    if ds.property(DEPEND_0) is not None:
        props[DEPEND_0] = ds.property(DEPEND_0)
    dep1 = ds.property(DEPEND_1)
    if dep1 is not None:
        props[_next_context_key(props)] = slice_point(dep1, j)
    bundle = ds.property(BUNDLE_1)
    if bundle is not None:
        label = bundle_labels(ds)[j]
        props[NAME] = label
        props[LABEL] = label
    dep2 = ds.property(DEPEND_2)
    if dep2 is not None:
        props[DEPEND_1] = dep2
    if ds.property(QUBE) and ds.rank - 1 >= 2:
        props[QUBE] = ds.property(QUBE)
    return QDataSet(ds.values[:, j], props)


# ---------------------------------------------------------------------------
# Validity and metadata-aware arithmetic
# ---------------------------------------------------------------------------

def validity(ds: QDataSet) -> np.ndarray:
    """Weights congruent to the values: 1 where valid, 0 at fill/out-of-range."""
    if ds.is_ragged:
        raise DataSetError("validity of ragged data is per-row; slice first")
    v = ds.values
    ok = np.isfinite(v)
    fill = ds.property(FILL_VALUE)
    if fill is not None:
        ok &= v != float(fill)
    vmin = ds.property(VALID_MIN)
    if vmin is not None:
        ok &= v >= float(vmin)
    vmax = ds.property(VALID_MAX)
    if vmax is not None:
        ok &= v <= float(vmax)
    return ok.astype(np.float64)


def _result_fill(ds: QDataSet) -> float:
    f = ds.property(FILL_VALUE)
    return float(f) if f is not None else math.nan


def _check_depend0_agreement(a: QDataSet, b: QDataSet) -> None:
    da, db = a.property(DEPEND_0), b.property(DEPEND_0)
    if da is None or db is None:
        return
    if len(da) != len(db):
        raise DataSetError("DEPEND_0 lengths disagree")
    vb = convert_values(db.values, db.units, da.units)
    if not np.array_equal(da.values, vb):
        raise DataSetError("DEPEND_0 values disagree between operands")


def _binary_op(a: QDataSet, b: QDataSet, op, units_of) -> QDataSet:
    if a.is_ragged or b.is_ragged:
        raise DataSetError("arithmetic on ragged data is not defined")
    if a.rank and b.rank and a.shape != b.shape:
        raise DataSetError(f"shape mismatch: {a.shape} vs {b.shape}")
    _check_depend0_agreement(a, b)
    wa, wb = validity(a), validity(b)
    result = op(a.values, b.values)
    ok = (wa * wb) > 0
    fill = _result_fill(a)
    out = np.where(ok, result, fill)
    props = {k: v for k, v in a._props.items()
             if k in (NAME, LABEL, DEPEND_0, DEPEND_1, DEPEND_2, BUNDLE_1,
                      QUBE) or k.startswith("CONTEXT_")}
    if a.rank == 0 and b.rank != 0:
        props = {k: v for k, v in b._props.items()
                 if k in (DEPEND_0, DEPEND_1, DEPEND_2, BUNDLE_1, QUBE)}
    u = units_of(a, b)
    if u.label:
        props[UNITS] = u.label
    if math.isnan(fill):
        props.pop(FILL_VALUE, None)
    else:
        props[FILL_VALUE] = fill
    return QDataSet(out, props)


def _addsub_units(a: QDataSet, b: QDataSet):
    ua, ub = a.units, b.units
    if not ua.convertible_to(ub):
        raise UnitsError(f"incompatible units: {ua.label!r} vs {ub.label!r}")
    return ua


def add(a: QDataSet, b: QDataSet) -> QDataSet:
    def op(x, y):
        yb = convert_values(y, b.units, a.units) if a.units.is_time_location else y
        return x + yb
    return _binary_op(a, b, op, _addsub_units)


def subtract(a: QDataSet, b: QDataSet) -> QDataSet:
    def op(x, y):
        yb = convert_values(y, b.units, a.units) if a.units.is_time_location else y
        return x - yb
    return _binary_op(a, b, op, _addsub_units)


def _compose_label(la: str, lb: str, sep: str) -> str:
    if not la:
        return lb if sep == "*" else (f"1/{lb}" if lb else "")
    if not lb:
        return la
    return f"{la}{sep}{lb}"


def multiply(a: QDataSet, b: QDataSet) -> QDataSet:
    def units_of(x, y):
        if x.units.is_time_location or y.units.is_time_location:
            raise UnitsError("cannot multiply time-location values")
        return Units(_compose_label(x.units.label, y.units.label, "*"))
    return _binary_op(a, b, lambda x, y: x * y, units_of)


def divide(a: QDataSet, b: QDataSet) -> QDataSet:
    def units_of(x, y):
        if x.units.is_time_location or y.units.is_time_location:
            raise UnitsError("cannot divide time-location values")
        return Units(_compose_label(x.units.label, y.units.label, "/"))

    def op(x, y):
        with np.errstate(divide="ignore", invalid="ignore"):
            return x / y
    return _binary_op(a, b, op, units_of)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def _collapsed_context(ds: QDataSet) -> QDataSet | None:
    """Extent of the collapsed index-0 tags, recorded as a [min,max] pair."""
    dep0 = ds.property(DEPEND_0)
    if dep0 is None or len(dep0) == 0:
        return None
    vals = dep0.values
    props = {NAME: "extent"}
    if dep0.property(UNITS) is not None:
        props[UNITS] = dep0.property(UNITS)
    return QDataSet([float(np.min(vals)), float(np.max(vals))], props)


def _reduce(ds: QDataSet, combine) -> QDataSet:
    if ds.rank < 1:
        raise DataSetError("reduction requires rank >= 1")
    if ds.is_ragged:
        raise DataSetError("reduce ragged data row by row via slice0")
    w = validity(ds)
    props = {k: ds._props[k] for k in (NAME, LABEL, UNITS) if k in ds._props}
    ctx = _collapsed_context(ds)
    if ctx is not None:
        props[_next_context_key(props)] = ctx
    result, any_valid = combine(ds.values, w)
    if ds.rank == 1:
        if not any_valid:
            fill = _result_fill(ds)
            props[FILL_VALUE] = fill if not math.isnan(fill) else -1e31
            return QDataSet(props[FILL_VALUE], props)
        return QDataSet(result, props)
    # rank >= 2: reduce along index 0, keep the remaining structure
    for k in (DEPEND_1, BUNDLE_1, BINS_1):
        if ds.property(k) is not None:
            props[DEPEND_0 if k == DEPEND_1 else k] = ds.property(k)
    fill = _result_fill(ds)
    out = np.where(np.isfinite(result), result, fill if not math.isnan(fill) else -1e31)
    if not math.isnan(fill):
        props[FILL_VALUE] = fill
    else:
        props[FILL_VALUE] = -1e31
    return QDataSet(out, props)


def total(ds: QDataSet) -> QDataSet:
    """Sum over index 0, excluding invalid elements."""
    def combine(v, w):
        s = np.sum(v * w, axis=0)
        has = np.sum(w, axis=0) > 0
        if v.ndim == 1:
            return float(s), bool(has)
        return np.where(has, s, np.nan), True
    return _reduce(ds, combine)


def mean(ds: QDataSet) -> QDataSet:
    """Arithmetic mean over index 0, excluding invalid elements."""
    def combine(v, w):
        n = np.sum(w, axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            m = np.sum(np.where(w > 0, v, 0.0) * w, axis=0) / n
        if v.ndim == 1:
            return (float(m) if n > 0 else math.nan), bool(n > 0)
        return np.where(n > 0, m, np.nan), True
    return _reduce(ds, combine)


def _extremum(ds: QDataSet, fn) -> QDataSet:
    def combine(v, w):
        masked = np.where(w > 0, v, np.nan)
        with np.errstate(all="ignore"):
            r = fn(masked, axis=0)
        if v.ndim == 1:
            ok = bool(np.any(w > 0))
            return (float(r) if ok else math.nan), ok
        return r, True
    return _reduce(ds, combine)


def minimum(ds: QDataSet) -> QDataSet:
    return _extremum(ds, np.nanmin)


def maximum(ds: QDataSet) -> QDataSet:
    return _extremum(ds, np.nanmax)


def histogram(ds: QDataSet, bins: int = 10) -> QDataSet:
    """Counts of valid values in `bins` equal-width bins; DEPEND_0 = centers."""
    if ds.rank < 1:
        raise DataSetError("histogram requires rank >= 1")
    w = validity(ds)
    vals = ds.values[w > 0]
    if vals.size == 0:
        raise DataSetError("histogram of all-invalid data")
    lo, hi = float(np.min(vals)), float(np.max(vals))
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    counts, edges = np.histogram(vals, bins=bins, range=(lo, hi))
    centers = (edges[:-1] + edges[1:]) / 2.0
    dep_props = {NAME: "bin_center"}
    if ds.property(UNITS) is not None:
        dep_props[UNITS] = ds.property(UNITS)
    dep = QDataSet(centers, dep_props)
    props = {NAME: "histogram", DEPEND_0: dep}
    if ds.property(NAME):
        props[LABEL] = f"count of {ds.property(NAME)}"
    return QDataSet(counts.astype(np.float64), props)


# ---------------------------------------------------------------------------
# Equality
# ---------------------------------------------------------------------------

def datasets_equal(a: QDataSet, b: QDataSet) -> bool:
    """Deep equality: values bit-exact and property maps equal."""
    if a.is_ragged != b.is_ragged:
        return False
    if a.is_ragged:
        if len(a) != len(b):
            return False
        for i in range(len(a)):
            if not np.array_equal(a.row(i), b.row(i), equal_nan=True):
                return False
    else:
        if a.shape != b.shape:
            return False
        if not np.array_equal(a.values, b.values, equal_nan=True):
            return False
    ka, kb = set(a._props), set(b._props)
    if ka != kb:
        return False
    for k in ka:
        va, vb = a._props[k], b._props[k]
        if isinstance(va, QDataSet) or isinstance(vb, QDataSet):
            if not (isinstance(va, QDataSet) and isinstance(vb, QDataSet)):
                return False
            if not datasets_equal(va, vb):
                return False
        elif k == UNITS:
            if Units.lookup(va) != Units.lookup(vb):
                return False
        elif isinstance(va, float) or isinstance(vb, float):
            if float(va) != float(vb):
                return False
        else:
            if va != vb:
                return False
    return True
