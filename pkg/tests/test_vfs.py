"""Virtual filesystem: caching, single-flight downloads, listings."""

from __future__ import annotations

import threading
from pathlib import Path

import pytest

from databrowse.vfs import FetchError, Vfs, cache_root, parse_ref


def test_parse_ref_file():
    r = parse_ref("file:///data/x.csv")
    assert r.scheme == "file" and r.path == "/data/x.csv"
    assert not r.is_directory


def test_parse_ref_http_directory():
    r = parse_ref("http://host:123/a/b/")
    assert r.scheme == "http" and r.authority == "host:123"
    assert r.is_directory


def test_parse_ref_normalizes_dotdot():
    r = parse_ref("http://host/a/../b/x.csv")
    assert r.path == "/b/x.csv"


def test_parse_ref_rejects_ftp():
    with pytest.raises(FetchError):
        parse_ref("ftp://host/x")


def test_cache_root_default_and_override(tmp_path, monkeypatch):
    monkeypatch.delenv("DATABROWSE_CACHE", raising=False)
    assert cache_root().name == "autoplot_data"
    assert cache_root().parent == Path.home()
    monkeypatch.setenv("DATABROWSE_CACHE", str(tmp_path / "alt"))
    assert cache_root() == (tmp_path / "alt").resolve()
    assert cache_root(tmp_path / "explicit") == (tmp_path / "explicit").resolve()


def test_fetch_local_is_identity(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a\n1\n")
    vfs = Vfs(cache_dir=tmp_path / "cache")
    assert vfs.fetch(f"file://{p}") == p


def test_fetch_local_missing(tmp_path):
    vfs = Vfs(cache_dir=tmp_path / "cache")
    with pytest.raises(FetchError) as e:
        vfs.fetch(f"file://{tmp_path}/nope.csv")
    assert e.value.status == 404


def test_fetch_http_caches(stub_server, tmp_path):
    (stub_server.root / "data.csv").write_text("x\n1\n2\n")
    vfs = Vfs(cache_dir=tmp_path / "cache")
    url = f"{stub_server.url}/data.csv"
    p1 = vfs.fetch(url)
    assert p1.read_text() == "x\n1\n2\n"  # content-transparent
    assert stub_server.count("/data.csv") == 1
    p2 = vfs.fetch(url)
    assert p2 == p1
    assert stub_server.count("/data.csv") == 1  # no second request


def test_fetch_http_404(stub_server, tmp_path):
    vfs = Vfs(cache_dir=tmp_path / "cache")
    with pytest.raises(FetchError) as e:
        vfs.fetch(f"{stub_server.url}/missing.csv")
    assert e.value.status == 404
    cached = list((tmp_path / "cache").rglob("missing.csv"))
    assert cached == []  # no cache entry for failures


def test_fetch_network_failure_is_retryable(tmp_path):
    vfs = Vfs(cache_dir=tmp_path / "cache", timeout=0.5)
    with pytest.raises(FetchError) as e:
        vfs.fetch("http://127.0.0.1:9/never.csv")
    assert e.value.retryable


def test_single_flight_one_download(stub_server, tmp_path):
    (stub_server.root / "big.csv").write_text("x\n" + "1\n" * 1000)
    vfs = Vfs(cache_dir=tmp_path / "cache")
    url = f"{stub_server.url}/big.csv"
    results = []
    errors = []

    def worker():
        try:
            results.append(vfs.fetch(url))
        except Exception as e:  # pragma: no cover
            errors.append(e)

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert len(set(results)) == 1
    assert stub_server.count("/big.csv") == 1


def test_no_partial_file_under_final_name(stub_server, tmp_path):
    (stub_server.root / "f.csv").write_text("col\n1\n")
    vfs = Vfs(cache_dir=tmp_path / "cache")
    local = vfs.fetch(f"{stub_server.url}/f.csv")
    siblings = [p.name for p in local.parent.iterdir()]
    assert all(not n.startswith(".f.csv.part") for n in siblings)
    meta = local.with_name(local.name + ".meta").read_text()
    assert "fetched=" in meta and "length=" in meta and "etag=" in meta


def test_listing_local_sorted_with_dir_suffix(tmp_path):
    d = tmp_path / "dir"
    (d / "sub").mkdir(parents=True)
    (d / "b.csv").write_text("x")
    (d / "a.csv").write_text("x")
    vfs = Vfs(cache_dir=tmp_path / "cache")
    assert vfs.listing(f"file://{d}/") == ["a.csv", "b.csv", "sub/"]


def test_listing_empty(tmp_path):
    d = tmp_path / "empty"
    d.mkdir()
    vfs = Vfs(cache_dir=tmp_path / "cache")
    assert vfs.listing(f"file://{d}/") == []


def test_listing_not_a_directory(tmp_path):
    p = tmp_path / "f.txt"
    p.write_text("x")
    vfs = Vfs(cache_dir=tmp_path / "cache")
    with pytest.raises(FetchError):
        vfs.listing(f"file://{p}")


def test_listing_http_index_anchors(stub_server, tmp_path):
    sub = stub_server.root / "files"
    sub.mkdir()
    for name in ("a1.csv", "a2.csv", "a3.csv"):
        (sub / name).write_text("x\n1\n")
    vfs = Vfs(cache_dir=tmp_path / "cache")
    names = vfs.listing(f"{stub_server.url}/files/")
    assert names == ["a1.csv", "a2.csv", "a3.csv"]


def test_listing_http_custom_index(stub_server, tmp_path):
    sub = stub_server.root / "idx"
    sub.mkdir()
    (sub / "index.html").write_text(
        '<html><body><a href="one.dat">one</a> <a href="/abs">no</a> '
        '<a href="http://other/x">no</a> <a href="two.dat">two</a>'
        '<a href="sub/">dir</a></body></html>')
    vfs = Vfs(cache_dir=tmp_path / "cache")
    names = vfs.listing(f"{stub_server.url}/idx/")
    assert names == ["one.dat", "sub/", "two.dat"]


def test_listing_stable(tmp_path, june_tree):
    vfs = Vfs(cache_dir=tmp_path / "cache")
    url = f"file://{june_tree}/2008/"
    assert vfs.listing(url) == vfs.listing(url)
