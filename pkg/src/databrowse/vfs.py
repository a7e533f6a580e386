"""Uniform access to local and HTTP resources with a persistent cache.

Remote files are downloaded once into the cache directory (by default
``autoplot_data`` under the user's home) and reused.  Concurrent fetches
of the same resource are de-duplicated: one download happens, every
caller gets the completed file.  Partial downloads are written to a
temporary name and renamed atomically, so a crash never leaves a broken
file under the final name.

Cache layout: ``<root>/<scheme>/<authority>/<path>``, with a sidecar
``<path>.meta`` text file (one key=value per line) recording the fetch
timestamp, content length, and entity tag when the server sent one.
"""

from __future__ import annotations

import os
import re
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from html.parser import HTMLParser
from pathlib import Path
from typing import Optional
from urllib.parse import urlsplit, urlunsplit, unquote

__all__ = ["ResourceRef", "Vfs", "FetchError", "cache_root", "parse_ref"]

CACHE_DIR_NAME = "autoplot_data"
CACHE_ENV_VAR = "DATABROWSE_CACHE"
DEFAULT_FRESH_SECONDS = 3600.0


class FetchError(OSError):
    """A resource could not be fetched.

    `status` carries the HTTP status when one was received; `retryable`
    marks transport-level failures worth retrying.
    """

    def __init__(self, message: str, status: Optional[int] = None,
                 retryable: bool = False):
        super().__init__(message)
        self.status = status
        self.retryable = retryable


@dataclass(frozen=True)
class ResourceRef:
    """A normalized file/http/https locator."""

    scheme: str
    authority: str
    path: str
    is_directory: bool = False

    def url(self) -> str:
        return urlunsplit((self.scheme, self.authority, self.path, "", ""))

    def child(self, name: str) -> "ResourceRef":
        base = self.path if self.path.endswith("/") else self.path + "/"
        return parse_ref(urlunsplit(
            (self.scheme, self.authority, base + name, "", "")))

    def parent(self) -> "ResourceRef":
        p = self.path.rstrip("/")
        head = p.rsplit("/", 1)[0] or "/"
        return ResourceRef(self.scheme, self.authority, head + "/", True)

    def __str__(self) -> str:
        return self.url()


def _normalize_path(path: str) -> str:
    # resolve "." and ".." so cache paths cannot escape their root
    out: list[str] = []
    for seg in path.split("/"):
        if seg in ("", "."):
            continue
        if seg == "..":
            if out:
                out.pop()
            continue
        out.append(seg)
    norm = "/" + "/".join(out)
    if path.endswith("/") and not norm.endswith("/"):
        norm += "/"
    return norm


def parse_ref(url: "str | ResourceRef") -> ResourceRef:
    if isinstance(url, ResourceRef):
        return url
    parts = urlsplit(url)
    scheme = parts.scheme.lower()
    if scheme == "file":
        path = _normalize_path(unquote(parts.path))
        return ResourceRef("file", "", path, path.endswith("/"))
    if scheme in ("http", "https"):
        path = _normalize_path(parts.path or "/")
        return ResourceRef(scheme, parts.netloc, path, path.endswith("/"))
    if scheme in ("ftp", "sftp"):
        raise FetchError(f"{scheme} transport is not implemented; use file/http/https")
    raise FetchError(f"unsupported scheme in {url!r}; use file/http/https")


def cache_root(override: "str | Path | None" = None) -> Path:
    """The cache directory: explicit override, env var, else <home>/autoplot_data."""
    if override is not None:
        return Path(override).expanduser().resolve()
    env = os.environ.get(CACHE_ENV_VAR)
    if env:
        return Path(env).expanduser().resolve()
    home = Path.home()
    if not str(home):
        raise FetchError("home directory unresolvable; set " + CACHE_ENV_VAR)
    return home / CACHE_DIR_NAME


class _IndexParser(HTMLParser):
    """Pulls child names out of a server index page (anchor extraction)."""

    def __init__(self):
        super().__init__()
        self.hrefs: list[str] = []

    def handle_starttag(self, tag, attrs):
        if tag.lower() != "a":
            return
        for name, value in attrs:
            if name.lower() == "href" and value:
                self.hrefs.append(value)


def _relative_children(hrefs: list[str]) -> list[str]:
    out = []
    for href in hrefs:
        h = href.split("#")[0].split("?")[0]
        if not h or h.startswith(("/", "../")) or "://" in h or h == "./":
            continue
        h = unquote(h)
        # one level only: "name" or "name/"
        core = h[:-1] if h.endswith("/") else h
        if "/" in core or core in (".", ".."):
            continue
        out.append(h)
    return sorted(set(out))


class Vfs:
    """Virtual filesystem: fetch files, list directories, manage the cache."""

    def __init__(self, cache_dir: "str | Path | None" = None,
                 fresh_seconds: float = DEFAULT_FRESH_SECONDS,
                 timeout: float = 30.0):
        self.cache_dir = cache_root(cache_dir)
        self.fresh_seconds = fresh_seconds
        self.timeout = timeout
        self._flight_lock = threading.Lock()
        self._flights: dict[str, threading.Lock] = {}
        self._session_complete: set[str] = set()

    # -- fetch --------------------------------------------------------------

    def fetch(self, ref: "str | ResourceRef") -> Path:
        """A readable local path for the resource; downloads at most once."""
        r = parse_ref(ref)
        if r.is_directory:
            raise FetchError(f"{r.url()} is a directory; use listing()")
        if r.scheme == "file":
            p = Path(r.path)
            if not p.exists():
                raise FetchError(f"no such file: {p}", status=404)
            return p
        return self._fetch_http(r)

    def _cache_path(self, r: ResourceRef) -> Path:
        return self.cache_dir / r.scheme / r.authority / r.path.lstrip("/")

    def _fetch_http(self, r: ResourceRef) -> Path:
        key = r.url()
        local = self._cache_path(r)
        with self._flight_lock:
            lock = self._flights.setdefault(key, threading.Lock())
        with lock:
            if key in self._session_complete and local.exists():
                return local
            if local.exists() and self._is_fresh(local):
                self._session_complete.add(key)
                return local
            self._download(r, local)
            self._session_complete.add(key)
            return local

    def _meta_path(self, local: Path) -> Path:
        return local.with_name(local.name + ".meta")

    def _read_meta(self, local: Path) -> dict:
        meta = {}
        mp = self._meta_path(local)
        if mp.exists():
            for line in mp.read_text().splitlines():
                k, _, v = line.partition("=")
                if k:
                    meta[k] = v
        return meta

    def _is_fresh(self, local: Path) -> bool:
        meta = self._read_meta(local)
        try:
            fetched = float(meta.get("fetched", "0"))
        except ValueError:
            fetched = 0.0
        return (time.time() - fetched) < self.fresh_seconds

    def _download(self, r: ResourceRef, local: Path) -> None:
        url = r.url()
        headers = {}
        if local.exists():
            meta = self._read_meta(local)
            if meta.get("etag"):
                headers["If-None-Match"] = meta["etag"]
            elif meta.get("fetched"):
                try:
                    when = time.gmtime(float(meta["fetched"]))
                    headers["If-Modified-Since"] = time.strftime(
                        "%a, %d %b %Y %H:%M:%S GMT", when)
                except ValueError:
                    pass
        req = urllib.request.Request(url, headers=headers)
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = resp.read()
                etag = resp.headers.get("ETag", "")
        except urllib.error.HTTPError as e:
            if e.code == 304:
                self._write_meta(local, local.stat().st_size, self._read_meta(local).get("etag", ""))
                return
            raise FetchError(f"HTTP {e.code} fetching {url}", status=e.code) from e
        except urllib.error.URLError as e:
            raise FetchError(f"network failure fetching {url}: {e.reason}",
                             retryable=True) from e
        local.parent.mkdir(parents=True, exist_ok=True)
        tmp = local.with_name(f".{local.name}.part-{os.getpid()}-{threading.get_ident()}")
        try:
            tmp.write_bytes(body)
            os.replace(tmp, local)
        except OSError as e:
            try:
                tmp.unlink(missing_ok=True)
            finally:
                pass
            raise FetchError(f"local disk failure caching {url}: {e}") from e
        self._write_meta(local, len(body), etag)

    def _write_meta(self, local: Path, length: int, etag: str) -> None:
        mp = self._meta_path(local)
        mp.write_text(
            f"fetched={time.time()}\nlength={length}\netag={etag}\n")

    # -- listing ------------------------------------------------------------

    def listing(self, ref: "str | ResourceRef") -> list[str]:
        """Sorted child names of a directory; subdirectories end in "/"."""
        r = parse_ref(ref)
        if r.scheme == "file":
            p = Path(r.path)
            if not p.is_dir():
                raise FetchError(f"not a directory: {p}")
            out = []
            for name in os.listdir(p):
                out.append(name + "/" if (p / name).is_dir() else name)
            return sorted(out)
        return self._list_http(r)

    def _list_http(self, r: ResourceRef) -> list[str]:
        url = r.url()
        if not url.endswith("/"):
            url += "/"
        try:
            with urllib.request.urlopen(url, timeout=self.timeout) as resp:
                html = resp.read().decode("utf-8", "replace")
        except urllib.error.HTTPError as e:
            raise FetchError(f"HTTP {e.code} listing {url}", status=e.code) from e
        except urllib.error.URLError as e:
            raise FetchError(f"network failure listing {url}: {e.reason}",
                             retryable=True) from e
        parser = _IndexParser()
        parser.feed(html)
        return _relative_children(parser.hrefs)
