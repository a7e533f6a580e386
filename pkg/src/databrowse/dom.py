"""Application-state tree: canvas layout, plots, elements, bindings, history.

The whole application state lives in one tree of typed nodes (plots,
axes, plot elements, data sources, bindings, layout rows/columns).  A
binding forces two node properties to stay equal; setting either one
propagates across the binding graph's connected component.  Every public
mutation records one snapshot, so undo/redo walk complete states.  The
tree serializes canonically to a ``.vap`` XML document and back.

Mutations are serialized through a single writer lock; readers get
immutable serialized snapshots.
"""

from __future__ import annotations

import re
import threading
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from typing import Callable, Iterable, Optional
from xml.sax.saxutils import escape, quoteattr

from . import qdataset as qds
from .qdataset import DatumRange, QDataSet, Units

__all__ = ["DOM", "DomError", "BindingError", "MS_1970_UNITS"]

MS_1970_UNITS = Units("milliseconds since 1970-01-01T00:00")
HISTORY_LIMIT = 100
# overlap fraction of the shorter span above which a new time axis is
# considered to show "the same" span as the application time range
AUTOBIND_OVERLAP = 0.25


class DomError(ValueError):
    """A DOM operation violated its preconditions."""


class BindingError(DomError):
    """Endpoint types differ or the binding already exists."""


# ---------------------------------------------------------------------------
# Property schema
# ---------------------------------------------------------------------------

TEXT = "text"
NUMBER = "number"
INTEGER = "integer"
BOOLEAN = "boolean"
RANGE = "range"
REF = "ref"
REFLIST = "reflist"


def _enum(*values: str) -> str:
    return "enum:" + "|".join(values)


_DEFAULT_RANGE = DatumRange(0.0, 1.0)

SCHEMA: dict = {
    "application": {
        "timerange": (RANGE, None),
        "focus": (REF, ""),
    },
    "canvas": {
        "width": (INTEGER, 800),
        "height": (INTEGER, 600),
        "rows": (REFLIST, ()),
        "columns": (REFLIST, ()),
    },
    "row": {"weight": (NUMBER, 1.0)},
    "column": {"weight": (NUMBER, 1.0)},
    "plot": {
        "title": (TEXT, ""),
        "xaxis": (REF, ""),
        "yaxis": (REF, ""),
        "zaxis": (REF, ""),
        "row": (REF, ""),
        "column": (REF, ""),
    },
    "axis": {
        "range": (RANGE, _DEFAULT_RANGE),
        "label": (TEXT, ""),
        "scale": (_enum("linear", "log"), "linear"),
        "visible": (BOOLEAN, True),
    },
    "plotElement": {
        "plot": (REF, ""),
        "dataSource": (REF, ""),
        "renderType": (_enum("series", "scatter", "spectrogram", "histogram"), "series"),
        "color": (TEXT, "#0000c0"),
        "lineWidth": (NUMBER, 1.0),
        "symbol": (TEXT, "none"),
        "parent": (REF, ""),
        "componentIndex": (INTEGER, -1),
        "visible": (BOOLEAN, True),
        "status": (TEXT, "ok"),
    },
    "dataSource": {"uri": (TEXT, "")},
    "binding": {
        "nodeA": (TEXT, ""),
        "propertyA": (TEXT, ""),
        "nodeB": (TEXT, ""),
        "propertyB": (TEXT, ""),
    },
    "options": {
        "background": (TEXT, "#ffffff"),
        "foreground": (TEXT, "#000000"),
    },
}

_STYLE_PROPS = ("color", "lineWidth", "symbol", "visible")
_ID_PREFIX = {
    "row": "row",
    "column": "col",
    "plot": "plot",
    "axis": "axis",
    "plotElement": "element",
    "dataSource": "data",
    "binding": "binding",
}

_SECTION_KINDS = ("plot", "plotElement", "dataSource", "binding")


@dataclass
class Node:
    id: str
    kind: str
    props: dict


def _semantic(kind: str, prop: str) -> str:
    try:
        return SCHEMA[kind][prop][0]
    except KeyError:
        raise DomError(f"no property {prop!r} on a {kind} node") from None


def _default_timerange() -> DatumRange:
    # 2000-01-01 .. 2000-01-02 in ms since 1970
    start = 946684800000.0
    return DatumRange(start, start + 86_400_000.0, MS_1970_UNITS)


# ---------------------------------------------------------------------------
# Value encoding for the .vap document
# ---------------------------------------------------------------------------

def _encode_value(semantic: str, value) -> str:
    if semantic == RANGE:
        return f"{value.minimum!r}|{value.maximum!r}|{value.units.label}"
    if semantic == BOOLEAN:
        return "true" if value else "false"
    if semantic == INTEGER:
        return str(int(value))
    if semantic == NUMBER:
        return repr(float(value))
    if semantic == REFLIST:
        return " ".join(value)
    return str(value)


def _decode_value(semantic: str, text: str):
    if semantic == RANGE:
        parts = text.split("|", 2)
        if len(parts) != 3:
            raise DomError(f"bad range encoding {text!r}")
        return DatumRange(float(parts[0]), float(parts[1]), Units(parts[2]))
    if semantic == BOOLEAN:
        return text == "true"
    if semantic == INTEGER:
        return int(text)
    if semantic == NUMBER:
        return float(text)
    if semantic == REFLIST:
        return tuple(t for t in text.split(" ") if t)
    return text


def _check_value(semantic: str, value):
    if semantic == RANGE:
        if not isinstance(value, DatumRange):
            raise DomError(f"expected a range value, got {type(value).__name__}")
        return value
    if semantic == BOOLEAN:
        if not isinstance(value, bool):
            raise DomError("expected a boolean")
        return value
    if semantic == INTEGER:
        if isinstance(value, bool) or not isinstance(value, int):
            raise DomError("expected an integer")
        return value
    if semantic == NUMBER:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise DomError("expected a number")
        return float(value)
    if semantic == REFLIST:
        return tuple(value)
    if semantic.startswith("enum:"):
        allowed = semantic[5:].split("|")
        if value not in allowed:
            raise DomError(f"expected one of {allowed}, got {value!r}")
        return value
    if not isinstance(value, str):
        raise DomError(f"expected text, got {type(value).__name__}")
    return value


def _ranges_compatible(a: DatumRange, b: DatumRange) -> bool:
    return a.units.is_time_location == b.units.is_time_location


def _overlap_fraction(a: DatumRange, b: DatumRange) -> float:
    b = b.to(a.units)
    lo = max(a.minimum, b.minimum)
    hi = min(a.maximum, b.maximum)
    if hi <= lo:
        return 0.0
    return (hi - lo) / min(a.span, b.span)


# ---------------------------------------------------------------------------
# DOM
# ---------------------------------------------------------------------------

class DOM:
    """Single-writer application state with bound properties and history."""

    def __init__(self, resolver: Optional[Callable] = None):
        self._lock = threading.RLock()
        self._resolver = resolver
        self._datasets: dict = {}
        self.revision = 0
        self._init_state()
        self._history: list[bytes] = [self._serialize()]
        self._cursor = 0

    def _init_state(self) -> None:
        self._nodes: dict[str, Node] = {}
        self._counters: dict[str, int] = {}
        app = Node("app", "application",
                   {"timerange": _default_timerange(), "focus": ""})
        canvas = Node("canvas", "canvas",
                      {"width": 800, "height": 600, "rows": (), "columns": ()})
        options = Node("options", "options",
                       {"background": "#ffffff", "foreground": "#000000"})
        for n in (app, canvas, options):
            self._nodes[n.id] = n

    # -- read access --------------------------------------------------------

    def node(self, node_id: str) -> Node:
        n = self._nodes.get(node_id)
        if n is None:
            raise DomError(f"unknown node {node_id!r}")
        return n

    def has_node(self, node_id: str) -> bool:
        return node_id in self._nodes

    def nodes_of_kind(self, kind: str) -> list:
        return [n for n in self._nodes.values() if n.kind == kind]

    def get(self, node_id: str, prop: str):
        n = self.node(node_id)
        _semantic(n.kind, prop)
        return n.props[prop]

    @property
    def timerange(self) -> DatumRange:
        return self._nodes["app"].props["timerange"]

    @property
    def focus(self) -> str:
        return self._nodes["app"].props["focus"]

    def focused_uri(self) -> Optional[str]:
        """URI behind the focused element (or a focused plot's first element)."""
        focus = self.focus
        if not focus or not self.has_node(focus):
            return None
        n = self.node(focus)
        element = None
        if n.kind == "plotElement":
            element = n
        elif n.kind == "plot":
            for e in self.nodes_of_kind("plotElement"):
                if e.props["plot"] == n.id:
                    element = e
                    break
        if element is None or not element.props["dataSource"]:
            return None
        return self.node(element.props["dataSource"]).props["uri"]

    def elements_of_plot(self, plot_id: str) -> list:
        return [e for e in self.nodes_of_kind("plotElement")
                if e.props["plot"] == plot_id]

    def children_of(self, element_id: str) -> list:
        return [e for e in self.nodes_of_kind("plotElement")
                if e.props["parent"] == element_id]

    # -- dataset resolution ---------------------------------------------------

    def dataset_for(self, element_id: str) -> QDataSet:
        """Resolved dataset of an element; component elements get their slice."""
        e = self.node(element_id)
        if e.kind != "plotElement":
            raise DomError(f"{element_id!r} is not a plot element")
        uri = self.node(e.props["dataSource"]).props["uri"]
        ds = self._resolve(uri)
        ci = e.props["componentIndex"]
        if ci >= 0 and ds.property(qds.BUNDLE_1) is not None:
            return qds.slice1(ds, ci)
        return ds

    def _resolve(self, uri: str) -> QDataSet:
        ds = self._datasets.get(uri)
        if ds is None:
            if self._resolver is None:
                raise DomError(f"no data resolver attached; cannot load {uri!r}")
            ds = self._resolver(uri)
            self._datasets[uri] = ds
        return ds

    def prime_dataset(self, uri: str, ds: QDataSet) -> None:
        """Pre-populate the dataset cache (embedded .vap data, tests)."""
        self._datasets[uri] = ds

    # -- id allocation --------------------------------------------------------

    def _new_id(self, kind: str) -> str:
        prefix = _ID_PREFIX[kind]
        n = self._counters.get(prefix, 0) + 1
        self._counters[prefix] = n
        return f"{prefix}_{n}"

    def _add_node(self, kind: str, **props) -> Node:
        node = Node(self._new_id(kind), kind, {})
        for prop, (semantic, default) in SCHEMA[kind].items():
            node.props[prop] = props.get(prop, default)
        self._nodes[node.id] = node
        return node

    # -- mutation plumbing ------------------------------------------------------

    def _commit(self) -> None:
        self.revision += 1
        del self._history[self._cursor + 1:]
        self._history.append(self._serialize())
        if len(self._history) > HISTORY_LIMIT:
            del self._history[0]
        self._cursor = len(self._history) - 1

    def undo(self) -> bool:
        """Return to the previous state; False when at the oldest state."""
        with self._lock:
            if self._cursor == 0:
                return False
            self._cursor -= 1
            self._restore(self._history[self._cursor])
            self.revision += 1
            return True

    def redo(self) -> bool:
        """Redo the last undo; False when there is nothing to redo."""
        with self._lock:
            if self._cursor >= len(self._history) - 1:
                return False
            self._cursor += 1
            self._restore(self._history[self._cursor])
            self.revision += 1
            return True

    # -- operations --------------------------------------------------------------

    def set_focus(self, node_id: str) -> None:
        with self._lock:
            n = self.node(node_id)
            if n.kind not in ("plot", "plotElement"):
                raise DomError(f"focus must name a plot or plot element, not {n.kind}")
            self._nodes["app"].props["focus"] = node_id
            self._commit()

    def set_property(self, node_id: str, prop: str, value) -> list:
        """Assign a property and propagate across its binding component.

        Returns the list of (node, property) endpoints assigned, each
        visited exactly once.
        """
        with self._lock:
            n = self.node(node_id)
            semantic = _semantic(n.kind, prop)
            value = _check_value(semantic, value)
            if semantic == REF and value and not self.has_node(value):
                raise DomError(f"reference to unknown node {value!r}")
            assigned = self._assign_component(node_id, prop, value)
            self._commit()
            return assigned

    def _assign_component(self, node_id: str, prop: str, value) -> list:
        adjacency: dict = {}
        for b in self.nodes_of_kind("binding"):
            a = (b.props["nodeA"], b.props["propertyA"])
            c = (b.props["nodeB"], b.props["propertyB"])
            adjacency.setdefault(a, []).append(c)
            adjacency.setdefault(c, []).append(a)
        start = (node_id, prop)
        seen = {start}
        queue = [start]
        assigned = []
        while queue:
            nid, p = queue.pop(0)
            self._assign_one(nid, p, value)
            assigned.append((nid, p))
            for nxt in adjacency.get((nid, p), ()):
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        return assigned

    def _assign_one(self, node_id: str, prop: str, value) -> None:
        n = self.node(node_id)
        n.props[prop] = value
        # an invisible parent element steers its component children
        if n.kind == "plotElement" and prop in _STYLE_PROPS:
            for child in self.children_of(node_id):
                if prop != "visible":
                    child.props[prop] = value

    def bind(self, node_a: str, prop_a: str, node_b: str, prop_b: str) -> str:
        """Force two properties equal; B immediately takes A's value."""
        with self._lock:
            sa = _semantic(self.node(node_a).kind, prop_a)
            sb = _semantic(self.node(node_b).kind, prop_b)
            if sa != sb:
                raise BindingError(
                    f"type mismatch: {node_a}.{prop_a} is {sa}, {node_b}.{prop_b} is {sb}")
            if sa == RANGE:
                va, vb = self.get(node_a, prop_a), self.get(node_b, prop_b)
                if not _ranges_compatible(va, vb):
                    raise BindingError(
                        "range endpoints must both be time-located or both plain")
            key = {(node_a, prop_a), (node_b, prop_b)}
            if (node_a, prop_a) == (node_b, prop_b):
                raise BindingError("cannot bind a property to itself")
            for b in self.nodes_of_kind("binding"):
                existing = {(b.props["nodeA"], b.props["propertyA"]),
                            (b.props["nodeB"], b.props["propertyB"])}
                if existing == key:
                    raise BindingError("binding already exists")
            node = self._add_node("binding", nodeA=node_a, propertyA=prop_a,
                                  nodeB=node_b, propertyB=prop_b)
            self._assign_component(node_a, prop_a, self.get(node_a, prop_a))
            self._commit()
            return node.id

    def unbind(self, node_a: str, prop_a: str, node_b: str, prop_b: str) -> None:
        with self._lock:
            key = {(node_a, prop_a), (node_b, prop_b)}
            for b in self.nodes_of_kind("binding"):
                existing = {(b.props["nodeA"], b.props["propertyA"]),
                            (b.props["nodeB"], b.props["propertyB"])}
                if existing == key:
                    del self._nodes[b.id]
                    self._commit()
                    return
            raise BindingError("no such binding")

    # -- plot/element creation ------------------------------------------------

    def _ensure_column(self) -> Node:
        canvas = self._nodes["canvas"]
        if canvas.props["columns"]:
            return self.node(canvas.props["columns"][0])
        col = self._add_node("column", weight=1.0)
        canvas.props["columns"] = canvas.props["columns"] + (col.id,)
        return col

    def _new_plot(self) -> Node:
        canvas = self._nodes["canvas"]
        row = self._add_node("row", weight=1.0)
        canvas.props["rows"] = canvas.props["rows"] + (row.id,)
        col = self._ensure_column()
        xaxis = self._add_node("axis")
        yaxis = self._add_node("axis")
        zaxis = self._add_node("axis")
        return self._add_node("plot", xaxis=xaxis.id, yaxis=yaxis.id,
                              zaxis=zaxis.id, row=row.id, column=col.id)

    def _focused_plot(self) -> Optional[Node]:
        focus = self.focus
        if focus and self.has_node(focus):
            n = self.node(focus)
            if n.kind == "plot":
                return n
            if n.kind == "plotElement" and n.props["plot"]:
                return self.node(n.props["plot"])
        plots = self.nodes_of_kind("plot")
        return plots[-1] if plots else None

    def _remove_plot_elements(self, plot_id: str) -> None:
        for e in self.elements_of_plot(plot_id):
            src = e.props["dataSource"]
            del self._nodes[e.id]
            if src and self.has_node(src):
                used = any(o.props.get("dataSource") == src
                           for o in self.nodes_of_kind("plotElement"))
                if not used:
                    del self._nodes[src]

    def add_plot_element(self, uri: str, placement: str = "replace") -> str:
        """Create data source + plot element(s) for a URI.

        Placement: "replace" swaps the focused plot's content, "below"
        stacks a new plot, "overplot" shares the focused plot's axes.
        Returns the id of the element that received focus.  A read
        failure still creates the element, in an error state.
        """
        if placement not in ("replace", "below", "overplot"):
            raise DomError(f"unknown placement {placement!r}")
        from .uri import parse_uri, UriError
        try:
            parse_uri(uri)
        except UriError as e:
            raise DomError(f"invalid URI: {e}") from None
        with self._lock:
            plot = self._focused_plot()
            if plot is None or placement == "below":
                plot = self._new_plot()
            elif placement == "replace":
                self._remove_plot_elements(plot.id)
            source = self._add_node("dataSource", uri=uri)
            try:
                ds = self._resolve(uri)
            except Exception as e:
                element = self._add_node("plotElement", plot=plot.id,
                                         dataSource=source.id,
                                         status=f"error: {e}")
                self._nodes["app"].props["focus"] = element.id
                self._commit()
                return element.id
            element = self._configure_elements(plot, source, ds)
            self._nodes["app"].props["focus"] = element.id
            self._commit()
            return element.id

    def _configure_elements(self, plot: Node, source: Node, ds: QDataSet) -> Node:
        from .render import autorange_dataset, render_type_default
        render_type = render_type_default(ds)
        bundle = ds.property(qds.BUNDLE_1)
        if bundle is not None and render_type == "series":
            parent = self._add_node("plotElement", plot=plot.id,
                                    dataSource=source.id, renderType="series",
                                    visible=False)
            palette = ("#0000c0", "#c00000", "#00a000", "#c08000")
            for i in range(len(bundle)):
                self._add_node("plotElement", plot=plot.id, dataSource=source.id,
                               renderType="series", parent=parent.id,
                               componentIndex=i, color=palette[i % len(palette)])
            head = parent
        else:
            head = self._add_node("plotElement", plot=plot.id,
                                  dataSource=source.id, renderType=render_type)
        self._autorange_plot(plot, ds, render_type)
        return head

    def _autorange_plot(self, plot: Node, ds: QDataSet, render_type: str) -> None:
        from .render import autorange_dataset
        xr, yr, zr, ylog, title, ylabel, xlabel = autorange_dataset(ds, render_type)
        xaxis, yaxis = self.node(plot.props["xaxis"]), self.node(plot.props["yaxis"])
        xaxis.props["range"] = xr
        xaxis.props["label"] = xlabel
        yaxis.props["range"] = yr
        yaxis.props["label"] = ylabel
        yaxis.props["scale"] = "log" if ylog else "linear"
        if zr is not None:
            self.node(plot.props["zaxis"]).props["range"] = zr
        if title and not plot.props["title"]:
            plot.props["title"] = title
        self._maybe_autobind_time_axis(xaxis)

    def _maybe_autobind_time_axis(self, xaxis: Node) -> None:
        xr = xaxis.props["range"]
        if not xr.units.is_time_location:
            return
        app = self._nodes["app"]
        tr = app.props["timerange"]
        bound_axes = [b for b in self.nodes_of_kind("binding")
                      if ("app", "timerange") in (
                          (b.props["nodeA"], b.props["propertyA"]),
                          (b.props["nodeB"], b.props["propertyB"]))]
        if not bound_axes:
            app.props["timerange"] = xr
            tr = xr
        if _overlap_fraction(tr, xr) >= AUTOBIND_OVERLAP:
            self._add_node("binding", nodeA="app", propertyA="timerange",
                           nodeB=xaxis.id, propertyB="range")
            self._assign_component("app", "timerange", tr)

    def delete_element(self, element_id: str) -> None:
        """Remove an element (and its component children); focus moves on."""
        with self._lock:
            e = self.node(element_id)
            if e.kind != "plotElement":
                raise DomError(f"{element_id!r} is not a plot element")
            doomed = [e] + self.children_of(element_id)
            sources = {n.props["dataSource"] for n in doomed if n.props["dataSource"]}
            for n in doomed:
                del self._nodes[n.id]
            for src in sources:
                if self.has_node(src):
                    used = any(o.props.get("dataSource") == src
                               for o in self.nodes_of_kind("plotElement"))
                    if not used:
                        del self._nodes[src]
            if self.focus not in self._nodes:
                remaining = self.nodes_of_kind("plotElement")
                self._nodes["app"].props["focus"] = (
                    remaining[-1].id if remaining else
                    (self.nodes_of_kind("plot")[-1].id
                     if self.nodes_of_kind("plot") else ""))
            self._commit()

    # -- serialization ------------------------------------------------------------

    def save_vap(self, embed_data: bool = False) -> bytes:
        """Canonical XML of the whole tree (optionally embedding datasets)."""
        with self._lock:
            return self._serialize(embed_data)

    def _serialize(self, embed_data: bool = False) -> bytes:
        w = _XmlWriter()
        w.open("vap", {"version": "1.0"})
        app = self._nodes["app"]
        for prop in sorted(SCHEMA["application"]):
            w.prop(prop, _semantic("application", prop), app.props[prop])
        canvas = self._nodes["canvas"]
        w.open("canvas", {"id": canvas.id})
        for prop in sorted(SCHEMA["canvas"]):
            w.prop(prop, _semantic("canvas", prop), canvas.props[prop])
        for rid in canvas.props["rows"]:
            self._write_node(w, self.node(rid))
        for cid in canvas.props["columns"]:
            self._write_node(w, self.node(cid))
        w.close("canvas")
        w.open("plots")
        for plot in self.nodes_of_kind("plot"):
            w.open("plot", {"id": plot.id})
            for prop in sorted(SCHEMA["plot"]):
                w.prop(prop, _semantic("plot", prop), plot.props[prop])
            for role in ("xaxis", "yaxis", "zaxis"):
                axis_id = plot.props[role]
                if axis_id:
                    self._write_node(w, self.node(axis_id), extra={"role": role})
            w.close("plot")
        w.close("plots")
        for section, kind in (("plotElements", "plotElement"),
                              ("dataSources", "dataSource"),
                              ("bindings", "binding")):
            w.open(section)
            for n in self.nodes_of_kind(kind):
                self._write_node(w, n)
            w.close(section)
        options = self._nodes["options"]
        w.open("options", {"id": options.id})
        for prop in sorted(SCHEMA["options"]):
            w.prop(prop, _semantic("options", prop), options.props[prop])
        w.close("options")
        if embed_data:
            from .datasource import write_qds
            w.open("data")
            for n in self.nodes_of_kind("dataSource"):
                uri = n.props["uri"]
                if uri in self._datasets:
                    w.open("dataset", {"source": n.id})
                    w.text(write_qds(self._datasets[uri]).decode("utf-8"))
                    w.close("dataset")
            w.close("data")
        w.close("vap")
        return w.bytes()

    def _write_node(self, w: "_XmlWriter", n: Node, extra: dict | None = None) -> None:
        attrs = {"id": n.id}
        if extra:
            attrs.update(extra)
        w.open(n.kind, attrs)
        for prop in sorted(SCHEMA[n.kind]):
            w.prop(prop, _semantic(n.kind, prop), n.props[prop])
        w.close(n.kind)

    def _restore(self, blob: bytes) -> None:
        nodes, counters = _parse_vap(blob)
        self._nodes = nodes
        self._counters = counters

    @classmethod
    def load_vap(cls, blob: "bytes | str", resolver: Optional[Callable] = None) -> "DOM":
        """Rebuild a DOM from a .vap document; data is re-read lazily."""
        if isinstance(blob, str):
            blob = blob.encode("utf-8")
        dom = cls.__new__(cls)
        dom._lock = threading.RLock()
        dom._resolver = resolver
        dom._datasets = {}
        dom.revision = 0
        nodes, counters = _parse_vap(blob, dataset_sink=dom._datasets)
        dom._nodes = nodes
        dom._counters = counters
        dom._history = [dom._serialize()]
        dom._cursor = 0
        return dom


# ---------------------------------------------------------------------------
# Canonical XML writing / parsing
# ---------------------------------------------------------------------------

class _XmlWriter:
    """Fixed-indentation writer with sorted attributes (canonical output)."""

    def __init__(self):
        self._lines = ['<?xml version="1.0" encoding="UTF-8"?>']
        self._depth = 0

    def _attrs(self, attrs: dict) -> str:
        if not attrs:
            return ""
        return "".join(f" {k}={quoteattr(str(v))}" for k, v in sorted(attrs.items()))

    def open(self, tag: str, attrs: dict | None = None) -> None:
        self._lines.append(f"{'  ' * self._depth}<{tag}{self._attrs(attrs or {})}>")
        self._depth += 1

    def close(self, tag: str) -> None:
        self._depth -= 1
        self._lines.append(f"{'  ' * self._depth}</{tag}>")

    def prop(self, name: str, semantic: str, value) -> None:
        enc = _encode_value(semantic, value)
        self._lines.append(
            f"{'  ' * self._depth}<property name={quoteattr(name)} "
            f"type={quoteattr(semantic)} value={quoteattr(enc)}/>")

    def text(self, content: str) -> None:
        for line in content.splitlines():
            self._lines.append(f"{'  ' * self._depth}{escape(line)}")

    def bytes(self) -> bytes:
        return ("\n".join(self._lines) + "\n").encode("utf-8")


def _read_props(elem: ET.Element, kind: str, path: str) -> dict:
    props = {}
    for child in elem:
        if child.tag != "property":
            continue
        name = child.get("name")
        semantic = child.get("type")
        raw = child.get("value")
        if name is None or semantic is None or raw is None:
            raise DomError(f"{path}: property element missing name/type/value")
        if name not in SCHEMA[kind]:
            raise DomError(f"{path}: unknown property {name!r} for {kind}")
        props[name] = _decode_value(semantic, raw)
    for prop, (semantic, default) in SCHEMA[kind].items():
        if prop not in props:
            if prop == "timerange":
                props[prop] = _default_timerange()
            else:
                props[prop] = default
    return props


def _parse_vap(blob: bytes, dataset_sink: dict | None = None):
    try:
        root = ET.fromstring(blob.decode("utf-8"))
    except ET.ParseError as e:
        raise DomError(f"not a .vap document: {e}") from None
    if root.tag != "vap":
        raise DomError(f"/: expected root <vap>, found <{root.tag}>")
    nodes: dict[str, Node] = {}
    nodes["app"] = Node("app", "application", _read_props(root, "application", "/vap"))

    def add(elem: ET.Element, kind: str, path: str) -> Node:
        node_id = elem.get("id")
        if not node_id:
            raise DomError(f"{path}: missing id attribute")
        if node_id in nodes:
            raise DomError(f"{path}: duplicate id {node_id!r}")
        n = Node(node_id, kind, _read_props(elem, kind, path))
        nodes[node_id] = n
        return n

    canvas_elem = root.find("canvas")
    if canvas_elem is None:
        raise DomError("/vap: missing <canvas>")
    canvas = Node("canvas", "canvas", _read_props(canvas_elem, "canvas", "/vap/canvas"))
    nodes["canvas"] = canvas
    for child in canvas_elem:
        if child.tag in ("row", "column"):
            add(child, child.tag, f"/vap/canvas/{child.tag}")
    plots_elem = root.find("plots")
    if plots_elem is not None:
        for p in plots_elem.findall("plot"):
            path = f"/vap/plots/plot[{p.get('id')}]"
            add(p, "plot", path)
            for a in p.findall("axis"):
                add(a, "axis", path + "/axis")
    for section, kind in (("plotElements", "plotElement"),
                          ("dataSources", "dataSource"),
                          ("bindings", "binding")):
        sec = root.find(section)
        if sec is None:
            continue
        for child in sec.findall(kind):
            add(child, kind, f"/vap/{section}/{kind}[{child.get('id')}]")
    opt = root.find("options")
    nodes["options"] = Node(
        "options", "options",
        _read_props(opt, "options", "/vap/options") if opt is not None
        else {p: d for p, (s, d) in SCHEMA["options"].items()})

    _validate_refs(nodes)

    data_elem = root.find("data")
    if data_elem is not None and dataset_sink is not None:
        from .datasource import read_qds, ReadError
        for d in data_elem.findall("dataset"):
            source_id = d.get("source")
            if source_id not in nodes:
                raise DomError(f"/vap/data/dataset: unknown source {source_id!r}")
            text = (d.text or "")
            try:
                ds = read_qds(text.encode("utf-8"))
            except ReadError as e:
                raise DomError(f"/vap/data/dataset[{source_id}]: {e}") from None
            dataset_sink[nodes[source_id].props["uri"]] = ds

    counters: dict[str, int] = {}
    for node_id in nodes:
        m = re.fullmatch(r"([a-z]+)_(\d+)", node_id)
        if m:
            counters[m.group(1)] = max(counters.get(m.group(1), 0), int(m.group(2)))
    return nodes, counters


def _validate_refs(nodes: dict) -> None:
    for n in nodes.values():
        for prop, (semantic, _) in SCHEMA[n.kind].items():
            if semantic == REF:
                target = n.props[prop]
                if target and target not in nodes:
                    raise DomError(
                        f"/{n.kind}[{n.id}]/{prop}: dangling reference {target!r}")
            elif semantic == REFLIST:
                for target in n.props[prop]:
                    if target not in nodes:
                        raise DomError(
                            f"/{n.kind}[{n.id}]/{prop}: dangling reference {target!r}")
