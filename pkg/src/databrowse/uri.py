"""Data-set URI parsing, formatting, validation, and completion.

Grammar (documented bit-exactly, URIs embed it):

    ["vap+" ext ":"] resource ["?" param *("&" param)]
    param = name ["=" value] | bare-token

The optional ``vap+ext:`` prefix pins the data-source plug-in; otherwise
the plug-in is implied by the resource's filename extension.  A bare
query token (``?Np``) is the principal parameter selecting what to plot.
Parameter order is preserved for round-tripping.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence
from urllib.parse import quote, unquote

__all__ = [
    "DataSetURI",
    "Diagnostic",
    "Suggestion",
    "UriError",
    "parse_uri",
    "format_uri",
    "implicit_extension",
    "validate",
    "complete",
]


class UriError(ValueError):
    """The text is not a data-set URI."""


_PREFIX_RE = re.compile(r"^vap\+([A-Za-z0-9_]*):")
# characters that survive formatting unescaped inside parameter values
_VALUE_SAFE = "/:,.$*()+@ -"


@dataclass(frozen=True)
class DataSetURI:
    """Parsed form of a data-set address."""

    resource: str
    explicit_ext: Optional[str] = None
    params: tuple = ()

    @property
    def principal(self) -> Optional[str]:
        """First bare (value-less) query token, e.g. the parameter to plot."""
        for name, value in self.params:
            if value is None:
                return name
        return None

    def get(self, name: str, default: Optional[str] = None) -> Optional[str]:
        for n, v in self.params:
            if n == name and v is not None:
                return v
        return default

    def without_param(self, name: str) -> "DataSetURI":
        kept = tuple((n, v) for n, v in self.params if n != name)
        return DataSetURI(self.resource, self.explicit_ext, kept)

    def with_param(self, name: str, value: Optional[str]) -> "DataSetURI":
        return DataSetURI(self.resource, self.explicit_ext,
                          self.params + ((name, value),))

    def __str__(self) -> str:
        return format_uri(self)


def parse_uri(text: str) -> DataSetURI:
    """Split the optional vap+ext: prefix, resource, and ordered params."""
    if not text or not text.strip():
        raise UriError("empty URI")
    t = text.strip()
    ext = None
    if t.startswith("vap+"):
        m = _PREFIX_RE.match(t)
        if not m or not m.group(1):
            raise UriError(f"malformed vap+ext: prefix in {text!r}")
        ext = m.group(1)
        t = t[m.end():]
    resource, sep, query = t.partition("?")
    if not resource:
        raise UriError(f"URI has an empty resource: {text!r}")
    params = []
    if sep:
        for token in query.split("&"):
            if not token:
                continue
            name, eq, value = token.partition("=")
            params.append((unquote(name), unquote(value) if eq else None))
    return DataSetURI(resource, ext, tuple(params))


def format_uri(d: DataSetURI) -> str:
    """Inverse of parse_uri; parse(format(d)) == d for every d."""
    out = []
    if d.explicit_ext:
        out.append(f"vap+{d.explicit_ext}:")
    out.append(d.resource)
    if d.params:
        toks = []
        for name, value in d.params:
            n = quote(name, safe=_VALUE_SAFE)
            toks.append(n if value is None else f"{n}={quote(value, safe=_VALUE_SAFE)}")
        out.append("?" + "&".join(toks))
    return "".join(out)


def resource_extension(resource: str) -> Optional[str]:
    path = resource.split("?")[0].rstrip("/")
    base = path.rsplit("/", 1)[-1]
    if "." in base:
        ext = base.rsplit(".", 1)[-1]
        return ext.lower() or None
    return None


def implicit_extension(d: DataSetURI, registry) -> str:
    """The plug-in extension: the explicit one, else mapped from the filename."""
    if d.explicit_ext:
        return d.explicit_ext
    ext = resource_extension(d.resource)
    if ext is None:
        raise UriError(
            f"no extension resolvable for {d.resource!r}; use a vap+ext: prefix")
    return registry.canonical_extension(ext) or ext


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Diagnostic:
    parameter: str
    reason: str

    def __str__(self) -> str:
        return f"{self.parameter}: {self.reason}"


def validate(d: DataSetURI, registry) -> list:
    """Diagnostics for a parsed URI; empty list means the plug-in accepts it."""
    from . import chrono

    diags: list[Diagnostic] = []
    try:
        ext = implicit_extension(d, registry)
    except UriError as e:
        return [Diagnostic("uri", str(e))]
    plugin = registry.find(ext)
    if plugin is None:
        return [Diagnostic(
            "uri",
            f"unregistered extension {ext!r}; known: {', '.join(registry.extensions())}")]
    tr = d.get("timerange")
    if tr is not None:
        try:
            chrono.parse_timerange(tr)
        except chrono.TimeParseError as e:
            diags.append(Diagnostic("timerange", str(e)))
    positional_seen = False
    for name, value in d.params:
        if value is None:
            if positional_seen:
                diags.append(Diagnostic(name, "multiple bare tokens; only one principal parameter is allowed"))
            positional_seen = True
            continue
        if name == "timerange":
            continue
        diag = plugin.validate_param(name, value)
        if diag is not None:
            diags.append(diag)
    return diags


# ---------------------------------------------------------------------------
# Completion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Suggestion:
    """One completion: the full replacement text plus the span it replaces."""

    text: str
    label: str
    replace_from: int = 0


def _scheme_suggestions(partial: str, registry) -> list:
    out = []
    for ext in registry.extensions():
        s = f"vap+{ext}:"
        if s.startswith(partial):
            out.append(Suggestion(s, s, 0))
    return out


def complete(partial: str, registry, vfs=None) -> list:
    """Context-sensitive suggestions for a partially typed URI.

    Three stages: registered schemes before the resource, filesystem
    children within the resource path, then the resolved plug-in's
    parameter names and values after "?".  Unresolvable contexts yield
    an empty list rather than an error.
    """
    partial = partial or ""
    if "?" in partial:
        return _complete_params(partial, registry, vfs)
    bare = partial
    prefix = ""
    m = _PREFIX_RE.match(partial)
    if m:
        prefix, bare = partial[:m.end()], partial[m.end():]
    if "://" not in bare:
        return _scheme_suggestions(partial, registry)
    return _complete_path(prefix, bare, registry, vfs)


def _complete_path(prefix: str, resource: str, registry, vfs) -> list:
    if vfs is None:
        return []
    head, _, stem = resource.rpartition("/")
    if "://" not in head:
        return []
    try:
        children = vfs.listing(head + "/")
    except Exception:
        return []
    out = []
    for child in children:
        if child.startswith(stem):
            full = prefix + head + "/" + child
            out.append(Suggestion(full, child, len(prefix) + len(head) + 1))
    return out


def _complete_params(partial: str, registry, vfs) -> list:
    head, _, query = partial.partition("?")
    context = head
    if "&" in query:
        context = head + "?" + query.rsplit("&", 1)[0]
    try:
        d = parse_uri(context)
    except UriError:
        return []
    try:
        ext = implicit_extension(d, registry)
    except UriError:
        return []
    plugin = registry.find(ext)
    if plugin is None:
        return []
    last_amp = query.rfind("&")
    token = query[last_amp + 1:]
    base = partial[: len(partial) - len(token)]
    replace_from = len(base)
    name, eq, value_stem = token.partition("=")
    local_path = None
    if vfs is not None:
        try:
            local_path = vfs.fetch(head)
        except Exception:
            local_path = None
    if eq:
        current = {n: v for n, v in d.params if v is not None}
        values = plugin.complete_values(name, local_path, current)
        return [
            Suggestion(base + f"{name}={v}", v, replace_from)
            for v in values
            if v.startswith(value_stem)
        ]
    out = []
    present = {n for n, _ in d.params}
    for pname in plugin.parameter_names():
        if pname.startswith(name) and pname not in present:
            out.append(Suggestion(base + f"{pname}=", f"{pname}=", replace_from))
    return out
