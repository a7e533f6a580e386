"""Data-source plug-ins: extension registry, readers, and exporters.

Two plug-ins ship by default.  The ASCII-table plug-in ("dat", with
aliases for csv/asc/txt/tab) parses delimited text with an optional
header row and time column.  The interchange plug-in ("qds") reads and
writes a self-describing text document that round-trips a dataset
losslessly, nested property datasets included.

Interchange document schema (".qds"), bit-exact:

    {
      "name":       text,
      "shape":      [int, ...]          # length = rank
      "values":     nested lists        # depth = rank; "fill" for non-finite
      "properties": { key: value, ... } # DEPEND_*/BUNDLE_*/BINS_*/CONTEXT_*
    }                                   # values are nested documents

CSV export writes a header row, comma delimiter, DEPEND_0 first in
ISO-8601 when time-located, and an empty cell for fill.
"""

from __future__ import annotations

import io
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import qdataset as qds
from .chrono import TimeParseError, instant_to_ms, parse_instant
from .qdataset import QDataSet, Units, make_dataset
from .uri import DataSetURI, Diagnostic

__all__ = [
    "PluginDescriptor",
    "PluginRegistry",
    "default_registry",
    "read_ascii",
    "read_qds",
    "write_qds",
    "write_csv",
    "read_dataset",
    "about_plugins",
    "ReadError",
]

MS_1970 = "milliseconds since 1970-01-01T00:00"


class ReadError(ValueError):
    """A file could not be interpreted as a dataset."""


# ---------------------------------------------------------------------------
# Registry
# ---------------------------------------------------------------------------

@dataclass
class PluginDescriptor:
    """One registered data-source plug-in."""

    id: str
    aliases: tuple
    capabilities: tuple
    reader: Callable
    param_schema: dict = field(default_factory=dict)
    value_completer: Optional[Callable] = None

    def parameter_names(self) -> list:
        return list(self.param_schema)

    def validate_param(self, name: str, value: str) -> Optional[Diagnostic]:
        check = self.param_schema.get(name)
        if check is None:
            return Diagnostic(name, f"unknown parameter for plug-in {self.id!r}")
        return check(name, value)

    def complete_values(self, name: str, local_path, params: dict | None = None) -> list:
        if self.value_completer is None:
            return []
        return self.value_completer(name, local_path, params or {})


class PluginRegistry:
    """Maps filename extensions to plug-ins; immutable once populated."""

    def __init__(self):
        self._by_ext: dict[str, PluginDescriptor] = {}
        self._plugins: list[PluginDescriptor] = []

    def register(self, plugin: PluginDescriptor) -> None:
        for ext in plugin.aliases:
            if ext in self._by_ext:
                raise ValueError(f"extension {ext!r} already registered")
            self._by_ext[ext] = plugin
        self._plugins.append(plugin)

    def find(self, ext: str) -> Optional[PluginDescriptor]:
        return self._by_ext.get(ext.lower())

    def canonical_extension(self, ext: str) -> Optional[str]:
        p = self._by_ext.get(ext.lower())
        return p.id if p else None

    def extensions(self) -> list:
        return sorted(p.id for p in self._plugins)

    def resolve(self, d: DataSetURI) -> PluginDescriptor:
        from .uri import implicit_extension
        ext = implicit_extension(d, self)
        p = self.find(ext)
        if p is None:
            raise ReadError(
                f"unregistered extension {ext!r}; known extensions: "
                + ", ".join(sorted(self._by_ext)))
        return p

    def __iter__(self):
        return iter(self._plugins)


def about_plugins(registry: PluginRegistry) -> str:
    """One line per plug-in: id, aliases, capabilities (the about:plugins listing)."""
    lines = []
    for p in registry:
        lines.append(
            f"{p.id}\taliases={','.join(p.aliases)}\tcapabilities={','.join(p.capabilities)}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# ASCII-table plug-in
# ---------------------------------------------------------------------------

_DELIMS = {"comma": ",", "semicolon": ";", "tab": "\t", "whitespace": None}
_NUM_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")


def _cell_is_numeric(token: str) -> bool:
    t = token.strip()
    if not t:
        return True  # empty cell = missing value
    if _NUM_RE.match(t):
        return True
    return _parse_time_cell(t) is not None


def _parse_time_cell(token: str) -> Optional[float]:
    """ISO-8601 or year-dayofyear token as ms since 1970, else None."""
    if _NUM_RE.match(token):
        return None  # plain numbers are data, not time tags
    try:
        instant = parse_instant(token)
    except TimeParseError:
        return None
    return float(instant_to_ms(instant))


def _split_row(line: str, delim: Optional[str]) -> list:
    if delim is None:
        return line.split()
    return [c.strip() for c in line.split(delim)]


def _int_param(name: str, value: str) -> Optional[Diagnostic]:
    try:
        if int(value) < 0:
            return Diagnostic(name, "must be a non-negative integer")
    except ValueError:
        return Diagnostic(name, f"not an integer: {value!r}")
    return None


def _float_param(name: str, value: str) -> Optional[Diagnostic]:
    try:
        float(value)
    except ValueError:
        return Diagnostic(name, f"not a number: {value!r}")
    return None


def _delim_param(name: str, value: str) -> Optional[Diagnostic]:
    if value not in _DELIMS:
        return Diagnostic(name, f"must be one of {', '.join(_DELIMS)}")
    return None


def _any_param(name: str, value: str) -> Optional[Diagnostic]:
    return None


ASCII_PARAMS = {
    "delim": _delim_param,
    "skip": _int_param,
    "column": _any_param,
    "depend0": _any_param,
    "fill": _float_param,
    "bundle": _any_param,
}


class _Table:
    """Parsed delimited text: column names plus string cells."""

    def __init__(self, names: list, cells: list, first_data_line: int):
        self.names = names
        self.cells = cells  # list of rows, each a list of strings
        self.first_data_line = first_data_line  # 1-based file line of cells[0]

    def column_index(self, key: str) -> int:
        if key in self.names:
            return self.names.index(key)
        try:
            i = int(key)
        except ValueError:
            raise ReadError(
                f"unknown column {key!r}; columns: {', '.join(self.names)}") from None
        if not 0 <= i < len(self.names):
            raise ReadError(f"column index {i} out of range 0..{len(self.names) - 1}")
        return i


def _parse_table(text: str, delim_name: str, skip: int) -> _Table:
    delim = _DELIMS[delim_name]
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    body = lines[skip:]
    rows: list[tuple[int, list]] = []
    for offset, line in enumerate(body):
        if not line.strip():
            continue
        rows.append((skip + offset + 1, _split_row(line, delim)))
    if not rows:
        raise ReadError("no data rows found")
    header: Optional[list] = None
    first_line, first_row = rows[0]
    if not all(_cell_is_numeric(c) for c in first_row):
        header = [c.strip() for c in first_row]
        rows = rows[1:]
        if not rows:
            raise ReadError("header present but no numeric rows follow")
    ncol = len(rows[0][1])
    names = header if header is not None else [f"field{i}" for i in range(ncol)]
    if len(names) != ncol:
        raise ReadError(
            f"header names {len(names)} columns but line {rows[0][0]} has {ncol}")
    for lineno, row in rows:
        if len(row) != ncol:
            raise ReadError(
                f"line {lineno}: expected {ncol} columns, found {len(row)}")
    return _Table(names, [r for _, r in rows], rows[0][0])


def _column_values(table: _Table, idx: int):
    """(values, is_time) for one column; empty/unparseable cells become NaN."""
    out = np.empty(len(table.cells), dtype=np.float64)
    time_count = 0
    for k, row in enumerate(table.cells):
        cell = row[idx].strip()
        if not cell:
            out[k] = math.nan
            continue
        if _NUM_RE.match(cell):
            out[k] = float(cell)
            continue
        t = _parse_time_cell(cell)
        if t is None:
            raise ReadError(
                f"line {table.first_data_line + k}: cannot parse cell {cell!r}")
        out[k] = t
        time_count += 1
    return out, time_count == len(table.cells) and len(table.cells) > 0


def _auto_depend0(table: _Table) -> Optional[int]:
    """First column whose every cell parses as a time."""
    for idx in range(len(table.names)):
        ok = True
        for row in table.cells:
            if _parse_time_cell(row[idx].strip()) is None:
                ok = False
                break
        if ok and table.cells:
            return idx
    return None


def read_ascii(path: "str | Path", uri_params: dict | None = None) -> QDataSet:
    """Read a delimited text file into a dataset.

    Recognized parameters: delim (comma|semicolon|tab|whitespace), skip,
    column (name or index), depend0 (name or index), fill (number),
    bundle (comma-separated column names).
    """
    params = dict(uri_params or {})
    delim_name = params.get("delim", "comma")
    if delim_name not in _DELIMS:
        raise ReadError(f"unknown delim {delim_name!r}; use one of {', '.join(_DELIMS)}")
    try:
        skip = int(params.get("skip", 0))
    except ValueError:
        raise ReadError(f"skip must be an integer, got {params.get('skip')!r}") from None
    text = Path(path).read_text(encoding="utf-8", errors="replace")
    table = _parse_table(text, delim_name, skip)

    fill = float(params["fill"]) if "fill" in params else None
    dep_idx: Optional[int] = None
    if "depend0" in params:
        dep_idx = table.column_index(params["depend0"])
    else:
        dep_idx = _auto_depend0(table)

    dep_ds = None
    if dep_idx is not None:
        dep_vals, is_time = _column_values(table, dep_idx)
        dep_props = {qds.NAME: table.names[dep_idx]}
        if is_time:
            dep_props[qds.UNITS] = MS_1970
        dep_ds = make_dataset(dep_vals, dep_props)

    if "bundle" in params:
        names = [n.strip() for n in params["bundle"].split(",") if n.strip()]
        cols = []
        for n in names:
            vals, _ = _column_values(table, table.column_index(n))
            cols.append(vals)
        props: dict = {
            qds.NAME: "bundle",
            qds.BUNDLE_1: qds.bundle_descriptor(names, names),
            qds.QUBE: True,
        }
        if dep_ds is not None:
            props[qds.DEPEND_0] = dep_ds
        if fill is not None:
            props[qds.FILL_VALUE] = fill
        return make_dataset(np.column_stack(cols), props)

    column = params.get("column")
    if column is None:
        candidates = [i for i in range(len(table.names)) if i != dep_idx]
        if len(candidates) != 1:
            raise ReadError(
                "multiple columns; select one with column= "
                f"(columns: {', '.join(table.names)})")
        col_idx = candidates[0]
    else:
        col_idx = table.column_index(column)
    vals, _ = _column_values(table, col_idx)
    props = {qds.NAME: table.names[col_idx]}
    if dep_ds is not None and col_idx != dep_idx:
        props[qds.DEPEND_0] = dep_ds
    if fill is not None:
        props[qds.FILL_VALUE] = fill
    return make_dataset(vals, props)


def _ascii_value_completions(name: str, local_path, params: dict) -> list:
    if name == "delim":
        return sorted(_DELIMS)
    if name in ("column", "depend0", "bundle") and local_path is not None:
        delim = params.get("delim", "comma")
        try:
            skip = int(params.get("skip", 0))
            text = Path(local_path).read_text(encoding="utf-8", errors="replace")
            table = _parse_table(text, delim if delim in _DELIMS else "comma", skip)
            return list(table.names)
        except (OSError, ValueError, ReadError):
            return []
    return []


# ---------------------------------------------------------------------------
# Interchange (".qds") plug-in
# ---------------------------------------------------------------------------

_NESTED_KEY_RE = re.compile(r"^(DEPEND_\d|BUNDLE_\d|BINS_\d|CONTEXT_\d)$")


def _values_to_json(ds: QDataSet):
    def encode(x):
        if isinstance(x, np.ndarray) and x.ndim > 0:
            return [encode(v) for v in x]
        v = float(x)
        return v if math.isfinite(v) else "fill"
    if ds.is_ragged:
        return [[encode(v) for v in ds.row(i)] for i in range(len(ds))]
    return encode(ds.values)


def _dataset_to_doc(ds: QDataSet) -> dict:
    props: dict = {}
    for key in sorted(ds.properties):
        value = ds.properties[key]
        if isinstance(value, QDataSet):
            props[key] = _dataset_to_doc(value)
        elif isinstance(value, Units):
            props[key] = value.label
        elif isinstance(value, (bool, int, float, str)):
            props[key] = value
        else:
            props[key] = str(value)
    shape = [] if ds.rank == 0 else (
        [len(ds)] if ds.is_ragged else list(ds.shape))
    return {
        "name": ds.property(qds.NAME, "") or "",
        "shape": shape,
        "values": _values_to_json(ds),
        "properties": props,
    }


def write_qds(ds: QDataSet) -> bytes:
    """Serialize a dataset to the interchange document (lossless round trip)."""
    doc = _dataset_to_doc(ds)
    return (json.dumps(doc, indent=1, sort_keys=False) + "\n").encode("utf-8")


def _values_from_json(node, path: str):
    if isinstance(node, list):
        return [_values_from_json(v, path) for v in node]
    if node == "fill":
        return math.nan
    if isinstance(node, (int, float)) and not isinstance(node, bool):
        return float(node)
    raise ReadError(f"{path}: expected number or \"fill\", got {node!r}")


def _depth(node) -> int:
    d = 0
    while isinstance(node, list):
        d += 1
        node = node[0] if node else None
    return d


def _doc_to_dataset(doc, path: str = "/") -> QDataSet:
    if not isinstance(doc, dict):
        raise ReadError(f"{path}: expected an object")
    for req in ("shape", "values"):
        if req not in doc:
            raise ReadError(f"{path}: missing required field {req!r}")
    shape = doc["shape"]
    if not isinstance(shape, list) or not all(isinstance(n, int) for n in shape):
        raise ReadError(f"{path}shape: must be a list of integers")
    values = _values_from_json(doc["values"], path + "values")
    depth = _depth(values)
    if depth != len(shape):
        raise ReadError(
            f"{path}values: nesting depth {depth} != declared rank {len(shape)}")
    props: dict = {}
    raw_props = doc.get("properties", {})
    if not isinstance(raw_props, dict):
        raise ReadError(f"{path}properties: must be a map")
    for key, value in raw_props.items():
        if _NESTED_KEY_RE.match(key):
            props[key] = _doc_to_dataset(value, f"{path}properties/{key}/")
        else:
            props[key] = value
    name = doc.get("name")
    if name:
        props.setdefault(qds.NAME, name)
    try:
        ds = make_dataset(values, props)
    except qds.DataSetError as e:
        raise ReadError(f"{path}: {e}") from None
    if not ds.is_ragged and list(ds.shape) != shape:
        raise ReadError(
            f"{path}shape: declared {shape} but values have shape {list(ds.shape)}")
    return ds


def read_qds(source: "str | Path | bytes", uri_params: dict | None = None) -> QDataSet:
    """Read an interchange document; errors carry the offending node path."""
    if isinstance(source, bytes):
        text = source.decode("utf-8")
    else:
        text = Path(source).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ReadError(f"not an interchange document: {e}") from None
    return _doc_to_dataset(doc)


def _qds_value_completions(name: str, local_path, params: dict) -> list:
    if name == "name" and local_path is not None:
        try:
            ds = read_qds(local_path)
            n = ds.property(qds.NAME)
            return [n] if n else []
        except (OSError, ReadError):
            return []
    return []


# ---------------------------------------------------------------------------
# CSV export
# ---------------------------------------------------------------------------

def _format_number(v: float) -> str:
    if math.isnan(v) or math.isinf(v):
        return ""
    return repr(v)


def write_csv(ds: QDataSet) -> bytes:
    """CSV export: header row, DEPEND_0 first (ISO-8601 when time-located)."""
    if ds.rank > 2:
        raise ReadError("CSV export supports rank 0-2 only")
    if ds.is_ragged:
        raise ReadError("CSV export of ragged data is not supported")
    out = io.StringIO()
    weights = qds.validity(ds) if ds.rank else None
    dep0 = ds.property(qds.DEPEND_0)
    name = ds.property(qds.NAME, "") or "data"

    def cell(v, valid) -> str:
        return _format_number(v) if valid else ""

    if ds.rank == 0:
        out.write(f"{name}\r\n{_format_number(float(ds.values))}\r\n")
        return out.getvalue().encode("utf-8")

    headers = []
    dep_is_time = False
    if dep0 is not None:
        headers.append(dep0.property(qds.NAME, "") or "time")
        dep_is_time = dep0.units.is_time_location
    if ds.rank == 1:
        headers.append(name)
    else:
        labels = None
        if ds.property(qds.BUNDLE_1) is not None:
            labels = qds.bundle_labels(ds)
        else:
            dep1 = ds.property(qds.DEPEND_1)
            if dep1 is not None:
                labels = [f"{name}_{_format_number(float(v))}" for v in dep1.values]
        if labels is None:
            labels = [f"{name}_{j}" for j in range(ds.shape[1])]
        headers.extend(labels)
    out.write(",".join(headers) + "\r\n")

    dep_w = qds.validity(dep0) if dep0 is not None else None
    for i in range(len(ds)):
        row = []
        if dep0 is not None:
            t = float(dep0.values[i])
            if dep_is_time:
                row.append(qds.format_time_datum(qds.Datum(t, dep0.units)))
            else:
                row.append(cell(t, dep_w[i] > 0))
        if ds.rank == 1:
            row.append(cell(float(ds.values[i]), weights[i] > 0))
        else:
            for j in range(ds.shape[1]):
                row.append(cell(float(ds.values[i, j]), weights[i, j] > 0))
        out.write(",".join(row) + "\r\n")
    return out.getvalue().encode("utf-8")


# ---------------------------------------------------------------------------
# Default registry and the front-door reader
# ---------------------------------------------------------------------------

def default_registry() -> PluginRegistry:
    reg = PluginRegistry()
    reg.register(PluginDescriptor(
        id="dat",
        aliases=("dat", "asc", "csv", "txt", "tab"),
        capabilities=("read", "complete", "export"),
        reader=read_ascii,
        param_schema=ASCII_PARAMS,
        value_completer=_ascii_value_completions,
    ))
    reg.register(PluginDescriptor(
        id="qds",
        aliases=("qds",),
        capabilities=("read", "complete", "export"),
        reader=read_qds,
        param_schema={"name": _any_param},
        value_completer=_qds_value_completions,
    ))
    return reg


def read_dataset(d: "DataSetURI | str", registry: PluginRegistry,
                 local_path: "str | Path") -> QDataSet:
    """Dispatch a fetched file to the plug-in resolved from the URI."""
    from .uri import parse_uri
    if isinstance(d, str):
        d = parse_uri(d)
    plugin = registry.resolve(d)
    params = {}
    principal = d.principal
    for name, value in d.params:
        if value is not None and name != "timerange":
            params[name] = value
    if principal is not None and "column" not in params:
        params["column"] = principal
    return plugin.reader(local_path, params)
