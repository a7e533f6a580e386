"""HTTP service: plot images, data export, completion, and DOM sessions.

Endpoints (HTTP/1.1):

    GET  /plot?uri=...&format=png|svg&width=&height=&timerange=&label=
    GET  /data?uri=...&format=csv|qds
    GET  /complete?partial=...
    POST /session                       -> {"id": ...}
    GET  /session/{id}/dom              -> .vap XML (+ pixel boxes, revision)
    POST /session/{id}/op               -> apply one DOM operation
    GET  /session/{id}/render?format=

Error bodies are JSON objects {code, message, diagnostics[]}.  Each
session's DOM is single-writer: operations are applied under its lock in
arrival order, so /dom always reflects a prefix of the submitted ops.
/plot is stateless and fully parallel; the download cache's single-
flight de-duplication keeps concurrent identical requests to one
upstream fetch.
"""

from __future__ import annotations

import json
import re
import secrets
import threading
import time
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Callable, Optional
from urllib.parse import parse_qs, unquote, urlsplit

from . import qdataset as qds
from .aggregation import AggregationError, aggregate_read
from .chrono import TimeParseError, parse_template, parse_timerange
from .datasource import (PluginRegistry, ReadError, default_registry,
                         read_dataset, write_csv, write_qds, about_plugins)
from .dom import DOM, MS_1970_UNITS, BindingError, DomError
from .qdataset import DatumRange, QDataSet
from .render import RenderError, plot_boxes, render_canvas
from .uri import UriError, complete, parse_uri, validate
from .vfs import FetchError, Vfs

__all__ = ["Service", "ServiceError", "make_resolver", "plot_bytes",
           "export_bytes", "run_server", "SESSION_IDLE_SECONDS"]

SESSION_IDLE_SECONDS = 30 * 60
DEFAULT_PORT = 8080
MIN_DIM, MAX_DIM = 64, 4096


class ServiceError(Exception):
    """Maps an internal failure to an HTTP status + machine-readable body."""

    def __init__(self, status: int, code: str, message: str,
                 diagnostics: Optional[list] = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.diagnostics = diagnostics or []

    def body(self) -> bytes:
        diags = []
        for d in self.diagnostics:
            if hasattr(d, "parameter"):
                diags.append({"parameter": d.parameter, "reason": d.reason})
            else:
                diags.append(str(d))
        return json.dumps(
            {"code": self.code, "message": str(self), "diagnostics": diags},
            indent=1).encode("utf-8")


def _translate(exc: Exception) -> ServiceError:
    if isinstance(exc, ServiceError):
        return exc
    if isinstance(exc, FetchError):
        if exc.status == 404:
            return ServiceError(404, "not-found", str(exc))
        return ServiceError(502, "upstream-failure", str(exc))
    if isinstance(exc, AggregationError):
        msg = str(exc)
        if "no files match" in msg:
            return ServiceError(404, "no-matches", msg)
        return ServiceError(502, "aggregation-failure", msg)
    if isinstance(exc, (UriError, ReadError, TimeParseError, RenderError,
                        DomError, ValueError)):
        return ServiceError(400, "invalid-request", str(exc))
    return ServiceError(500, "internal-error", f"{type(exc).__name__}: {exc}")


# ---------------------------------------------------------------------------
# Shared pipeline helpers (used by the CLI too, so outputs are byte-identical)
# ---------------------------------------------------------------------------

def make_resolver(vfs: Vfs, registry: PluginRegistry,
                  fallback_timerange: Optional[str] = None) -> Callable:
    """Resolver mapping a URI to a dataset, aggregating templated URIs."""

    def resolve(uri_text: str) -> QDataSet:
        d = parse_uri(uri_text)
        if parse_template(d.resource).has_fields:
            rng = d.get("timerange") or fallback_timerange
            if rng is None:
                raise AggregationError(
                    "templated URI needs a timerange= parameter")
            return aggregate_read(d, rng, vfs, registry)
        local = vfs.fetch(d.resource)
        return read_dataset(d, registry, local)

    return resolve


def _validated_or_raise(uri_text: str, registry: PluginRegistry) -> None:
    d = parse_uri(uri_text)
    diags = validate(d, registry)
    if diags:
        raise ServiceError(400, "invalid-uri",
                           f"URI failed validation: {uri_text}", diags)


def build_plot_dom(uri_text: str, timerange: Optional[str], vfs: Vfs,
                   registry: PluginRegistry, width: int = 800,
                   height: int = 600, label: Optional[str] = None) -> DOM:
    """A transient single-plot DOM for a URI (the /plot pipeline)."""
    _validated_or_raise(uri_text, registry)
    dom = DOM(resolver=make_resolver(vfs, registry, timerange))
    canvas = dom.node("canvas")
    canvas.props["width"] = width
    canvas.props["height"] = height
    element_id = dom.add_plot_element(uri_text, "replace")
    element = dom.node(element_id)
    if element.props["status"].startswith("error"):
        raise ServiceError(400, "read-failure", element.props["status"])
    if timerange is not None:
        interval = parse_timerange(timerange)
        rng = DatumRange(float(interval.start_ms), float(interval.end_ms),
                         MS_1970_UNITS)
        plot = dom.node(element.props["plot"])
        xaxis_id = plot.props["xaxis"]
        if dom.get(xaxis_id, "range").units.is_time_location:
            dom.set_property(xaxis_id, "range", rng)
    if label:
        plot = dom.node(element.props["plot"])
        dom.set_property(plot.props["yaxis"], "label", label)
    return dom


def plot_bytes(uri_text: str, fmt: str = "png",
               timerange: Optional[str] = None, width: int = 800,
               height: int = 600, vfs: Optional[Vfs] = None,
               registry: Optional[PluginRegistry] = None,
               label: Optional[str] = None) -> bytes:
    """Render a URI to image bytes; the CLI and /plot share this path."""
    vfs = vfs or Vfs()
    registry = registry or default_registry()
    if fmt not in ("png", "svg"):
        raise ServiceError(400, "invalid-format", f"format must be png or svg, got {fmt!r}")
    if not (MIN_DIM <= width <= MAX_DIM and MIN_DIM <= height <= MAX_DIM):
        raise ServiceError(400, "invalid-size",
                           f"width/height must lie in [{MIN_DIM}, {MAX_DIM}]")
    dom = build_plot_dom(uri_text, timerange, vfs, registry, width, height, label)
    return render_canvas(dom, fmt)


def export_bytes(uri_text: str, fmt: str, vfs: Optional[Vfs] = None,
                 registry: Optional[PluginRegistry] = None,
                 timerange: Optional[str] = None) -> tuple:
    """(bytes, content-type) for a dataset export via the writers."""
    vfs = vfs or Vfs()
    registry = registry or default_registry()
    if fmt not in ("csv", "qds"):
        raise ServiceError(400, "invalid-format",
                           f"format must be csv or qds, got {fmt!r}")
    resolver = make_resolver(vfs, registry, timerange)
    ds = resolver(uri_text)
    if fmt == "csv":
        try:
            return write_csv(ds), "text/csv; charset=utf-8"
        except ReadError as e:
            raise ServiceError(422, "unsupported-rank", str(e)) from None
    return write_qds(ds), "application/json; charset=utf-8"


# ---------------------------------------------------------------------------
# Sessions
# ---------------------------------------------------------------------------

@dataclass
class Session:
    id: str
    dom: DOM
    last_access: float = field(default_factory=time.time)


class SessionStore:
    def __init__(self, resolver_factory: Callable, idle_seconds: float = SESSION_IDLE_SECONDS):
        self._resolver_factory = resolver_factory
        self._idle = idle_seconds
        self._sessions: dict[str, Session] = {}
        self._expired: set[str] = set()
        self._lock = threading.Lock()

    def create(self) -> Session:
        with self._lock:
            sid = secrets.token_hex(8)
            s = Session(sid, DOM(resolver=self._resolver_factory()))
            self._sessions[sid] = s
            return s

    def get(self, sid: str) -> Session:
        with self._lock:
            s = self._sessions.get(sid)
            now = time.time()
            if s is not None and now - s.last_access > self._idle:
                del self._sessions[sid]
                self._expired.add(sid)
                s = None
            if s is None:
                if sid in self._expired:
                    raise ServiceError(410, "session-expired",
                                       f"session {sid} expired")
                raise ServiceError(404, "unknown-session",
                                   f"no session {sid}")
            s.last_access = now
            return s


# ---------------------------------------------------------------------------
# DOM operation dispatch
# ---------------------------------------------------------------------------

def _decode_property_value(dom: DOM, node_id: str, prop: str, value):
    from .dom import SCHEMA, _semantic
    semantic = _semantic(dom.node(node_id).kind, prop)
    if semantic == "range":
        if isinstance(value, dict):
            units = value.get("units", "")
            return DatumRange(float(value["min"]), float(value["max"]),
                              qds.Units(units))
        if isinstance(value, str):
            interval = parse_timerange(value)
            return DatumRange(float(interval.start_ms), float(interval.end_ms),
                              MS_1970_UNITS)
        raise DomError("range value must be {min,max,units} or a time range string")
    if semantic == "integer" and isinstance(value, float) and value.is_integer():
        return int(value)
    return value


def apply_op(dom: DOM, body: dict) -> dict:
    """Apply one session operation; returns an acknowledgment payload."""
    op = body.get("op")
    args = body.get("args", {})
    if op == "add_plot_element":
        element = dom.add_plot_element(args["uri"], args.get("placement", "replace"))
        return {"ok": True, "element": element, "revision": dom.revision}
    if op == "set_property":
        value = _decode_property_value(dom, args["node"], args["property"],
                                       args["value"])
        assigned = dom.set_property(args["node"], args["property"], value)
        return {"ok": True, "assigned": len(assigned), "revision": dom.revision}
    if op == "bind":
        bid = dom.bind(args["nodeA"], args["propertyA"],
                       args["nodeB"], args["propertyB"])
        return {"ok": True, "binding": bid, "revision": dom.revision}
    if op == "unbind":
        dom.unbind(args["nodeA"], args["propertyA"],
                   args["nodeB"], args["propertyB"])
        return {"ok": True, "revision": dom.revision}
    if op == "undo":
        changed = dom.undo()
        return {"ok": True, "changed": changed, "revision": dom.revision}
    if op == "redo":
        changed = dom.redo()
        return {"ok": True, "changed": changed, "revision": dom.revision}
    if op == "set_focus":
        dom.set_focus(args["node"])
        return {"ok": True, "revision": dom.revision}
    if op == "delete_element":
        dom.delete_element(args["element"])
        return {"ok": True, "revision": dom.revision}
    raise ServiceError(400, "unknown-op", f"unknown op {op!r}")


def dom_document(dom: DOM) -> bytes:
    """The serialized DOM plus per-plot pixel boxes and the revision tag."""
    blob = dom.save_vap()
    root = ET.fromstring(blob.decode("utf-8"))
    root.set("revision", str(dom.revision))
    boxes = plot_boxes(dom)
    plots = root.find("plots")
    if plots is not None:
        for p in plots.findall("plot"):
            box = boxes.get(p.get("id"))
            if box:
                p.set("box", ",".join(str(v) for v in box))
    return (b'<?xml version="1.0" encoding="UTF-8"?>\n'
            + ET.tostring(root, encoding="unicode").encode("utf-8") + b"\n")


# ---------------------------------------------------------------------------
# The HTTP server
# ---------------------------------------------------------------------------

class Service:
    """Bundles registry, vfs, sessions, and optional static UI files."""

    def __init__(self, cache_dir=None, registry: Optional[PluginRegistry] = None,
                 static_dir: Optional[str] = None,
                 session_idle_seconds: float = SESSION_IDLE_SECONDS):
        self.vfs = Vfs(cache_dir)
        self.registry = registry or default_registry()
        self.sessions = SessionStore(
            lambda: make_resolver(self.vfs, self.registry),
            session_idle_seconds)
        self.static_dir = Path(static_dir) if static_dir else _find_static_dir()

    def handle(self, method: str, path: str, query: dict, body: bytes):
        """Route one request; returns (status, content_type, payload)."""
        if method == "GET" and path == "/plot":
            return self._plot(query)
        if method == "GET" and path == "/data":
            return self._data(query)
        if method == "GET" and path == "/complete":
            return self._complete(query)
        if method == "GET" and path == "/about/plugins":
            return 200, "text/plain; charset=utf-8", about_plugins(self.registry).encode()
        if method == "POST" and path == "/session":
            s = self.sessions.create()
            return 200, "application/json", json.dumps({"id": s.id}).encode()
        m = re.fullmatch(r"/session/([0-9a-f]+)/(dom|op|render)", path)
        if m:
            return self._session_request(method, m.group(1), m.group(2), query, body)
        if method == "GET":
            served = self._static(path)
            if served is not None:
                return served
        raise ServiceError(404, "no-route", f"no route for {method} {path}")

    def _plot(self, query: dict):
        uri = _required(query, "uri")
        fmt = query.get("format", "png")
        width = _int_param(query, "width", 800)
        height = _int_param(query, "height", 600)
        timerange = query.get("timerange")
        label = query.get("label")
        body = plot_bytes(uri, fmt, timerange, width, height,
                          self.vfs, self.registry, label)
        ctype = "image/png" if fmt == "png" else "image/svg+xml"
        return 200, ctype, body

    def _data(self, query: dict):
        uri = _required(query, "uri")
        fmt = query.get("format", "csv")
        timerange = query.get("timerange")
        body, ctype = export_bytes(uri, fmt, self.vfs, self.registry, timerange)
        return 200, ctype, body

    def _complete(self, query: dict):
        partial = query.get("partial", "")
        suggestions = complete(partial, self.registry, self.vfs)
        payload = {"partial": partial, "suggestions": [
            {"text": s.text, "label": s.label, "replaceFrom": s.replace_from}
            for s in suggestions]}
        return 200, "application/json", json.dumps(payload, indent=1).encode()

    def _session_request(self, method: str, sid: str, action: str,
                         query: dict, body: bytes):
        session = self.sessions.get(sid)
        if action == "dom" and method == "GET":
            return 200, "application/xml; charset=utf-8", dom_document(session.dom)
        if action == "render" and method == "GET":
            fmt = query.get("format", "png")
            if fmt not in ("png", "svg"):
                raise ServiceError(400, "invalid-format",
                                   f"format must be png or svg, got {fmt!r}")
            payload = render_canvas(session.dom, fmt)
            ctype = "image/png" if fmt == "png" else "image/svg+xml"
            return 200, ctype, payload
        if action == "op" and method == "POST":
            try:
                parsed = json.loads(body.decode("utf-8") or "{}")
            except json.JSONDecodeError as e:
                raise ServiceError(400, "bad-op-body", f"op body is not JSON: {e}")
            try:
                ack = apply_op(session.dom, parsed)
            except KeyError as e:
                raise ServiceError(400, "bad-op-body",
                                   f"op body missing field {e}") from None
            except (DomError, BindingError) as e:
                raise ServiceError(409, "op-rejected", str(e)) from None
            return 200, "application/json", json.dumps(ack).encode()
        raise ServiceError(404, "no-route", f"no route for {method} /session/.../{action}")

    def _static(self, path: str):
        if self.static_dir is None:
            return None
        rel = "index.html" if path == "/" else path.lstrip("/")
        if rel.startswith("ui/"):
            rel = rel[3:]
        candidate = (self.static_dir / rel).resolve()
        try:
            candidate.relative_to(self.static_dir.resolve())
        except ValueError:
            return None
        if not candidate.is_file():
            return None
        ctype = {
            ".html": "text/html; charset=utf-8",
            ".js": "text/javascript; charset=utf-8",
            ".css": "text/css; charset=utf-8",
            ".png": "image/png",
            ".svg": "image/svg+xml",
        }.get(candidate.suffix, "application/octet-stream")
        return 200, ctype, candidate.read_bytes()


def _find_static_dir() -> Optional[Path]:
    import os
    env = os.environ.get("DATABROWSE_UI")
    if env and Path(env).is_dir():
        return Path(env)
    local = Path.cwd() / "frontend" / "dist"
    if local.is_dir():
        return local
    return None


def _required(query: dict, name: str) -> str:
    v = query.get(name)
    if v is None:
        raise ServiceError(400, "missing-parameter",
                           f"query parameter {name!r} is required")
    return v


def _int_param(query: dict, name: str, default: int) -> int:
    v = query.get(name)
    if v is None:
        return default
    try:
        return int(v)
    except ValueError:
        raise ServiceError(400, "invalid-parameter",
                           f"{name} must be an integer, got {v!r}") from None


class _Handler(BaseHTTPRequestHandler):
    service: Service = None  # set by make_server
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):  # keep test output quiet
        pass

    def _respond(self, status: int, ctype: str, payload: bytes) -> None:
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(payload)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(payload)

    def _dispatch(self, method: str) -> None:
        parts = urlsplit(self.path)
        query = {k: v[0] for k, v in parse_qs(parts.query,
                                              keep_blank_values=True).items()}
        length = int(self.headers.get("Content-Length") or 0)
        body = self.rfile.read(length) if length else b""
        try:
            status, ctype, payload = self.service.handle(
                method, unquote(parts.path), query, body)
        except Exception as e:
            err = _translate(e)
            self._respond(err.status, "application/json", err.body())
            return
        self._respond(status, ctype, payload)

    def do_GET(self):
        self._dispatch("GET")

    def do_POST(self):
        self._dispatch("POST")


def make_server(service: Service, host: str = "127.0.0.1",
                port: int = DEFAULT_PORT) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"service": service})
    server = ThreadingHTTPServer((host, port), handler)
    server.daemon_threads = True
    return server


def run_server(host: str = "0.0.0.0", port: int = DEFAULT_PORT,
               cache_dir=None) -> None:
    service = Service(cache_dir=cache_dir)
    server = make_server(service, host, port)
    print(f"serving on http://{host}:{port}/ (cache: {service.vfs.cache_dir})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
