"""Shared fixtures: the three reference datasets, file trees, stub server."""

from __future__ import annotations

import threading
from datetime import datetime, timedelta, timezone
from functools import partial
from http.server import SimpleHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
import pytest

from databrowse import qdataset as qds
from databrowse.qdataset import QDataSet, make_dataset

UTC = timezone.utc
MS_1970 = "milliseconds since 1970-01-01T00:00"
DAYS_2000 = "days since 2000-01-01T00:00"


def _epoch_ms(start: datetime, n: int, step_ms: float) -> np.ndarray:
    base = (start - datetime(1970, 1, 1, tzinfo=UTC)).total_seconds() * 1000.0
    return base + np.arange(n) * step_ms


@pytest.fixture
def np_dataset() -> QDataSet:
    """Rank-1 proton-density series: 288 samples, 5-minute cadence."""
    n = 288
    epoch = make_dataset(
        _epoch_ms(datetime(2008, 6, 5, tzinfo=UTC), n, 5 * 60 * 1000.0),
        {qds.NAME: "Epoch", qds.UNITS: MS_1970})
    values = 5.0 + 2.0 * np.sin(np.arange(n) * 2 * np.pi / n)
    return make_dataset(values, {
        qds.NAME: "Np",
        qds.LABEL: "SW H Num Density",
        qds.UNITS: "#/cc",
        qds.DEPEND_0: epoch,
    })


@pytest.fixture
def electron_def_dataset() -> QDataSet:
    """Rank-2 differential-energy-flux spectrogram: 6260 x 29 cells."""
    n, m = 6260, 29
    epoch = make_dataset(
        _epoch_ms(datetime(2009, 10, 4, tzinfo=UTC), n, 12 * 1000.0),
        {qds.NAME: "Epoch", qds.UNITS: MS_1970})
    energy = make_dataset(np.logspace(1, 4.5, m), {
        qds.NAME: "Energy",
        qds.LABEL: "Electron Energy",
        qds.UNITS: "eV",
        qds.SCALE_TYPE: "log",
    })
    t = np.arange(n)[:, None] / n
    e = np.arange(m)[None, :] / m
    values = 1e8 * (1.0 + np.sin(8 * np.pi * t)) * np.exp(-3 * e) + 1e3
    values[1000, 5] = 2.0e10  # above VALID_MAX
    values[2000, 7] = -1.0    # below VALID_MIN
    return make_dataset(values, {
        qds.NAME: "Electron_DEF",
        qds.LABEL: "Electron DEF",
        qds.TITLE: "Electron Differential Energy Flux",
        qds.UNITS: "1/(cm2-s-sr)",
        qds.VALID_MIN: 0.0,
        qds.VALID_MAX: 1.24e10,
        qds.SCALE_TYPE: "log",
        qds.QUBE: True,
        qds.DEPEND_0: epoch,
        qds.DEPEND_1: energy,
    })


@pytest.fixture
def bgsm_dataset() -> QDataSet:
    """Rank-2 bundle of three field components on a daily time tag."""
    n = 24
    time = make_dataset(np.arange(n, dtype=np.float64), {
        qds.NAME: "Time", qds.UNITS: DAYS_2000})
    bx = 3.0 * np.sin(np.arange(n) / 3.0)
    by = 2.0 * np.cos(np.arange(n) / 4.0)
    bz = -1.0 + 0.1 * np.arange(n)
    bundle = qds.bundle_descriptor(
        ["Bx (GSM)", "By (GSM)", "Bz (GSM)"], ["Bx", "By", "Bz"])
    return make_dataset(np.column_stack([bx, by, bz]), {
        qds.NAME: "BGSM",
        qds.UNITS: "nT",
        qds.VALID_MIN: -65534.0,
        qds.VALID_MAX: 65534.0,
        qds.QUBE: True,
        qds.DEPEND_0: time,
        qds.BUNDLE_1: bundle,
    })


def write_daily_csv(path: Path, day: datetime, rows: int = 8) -> None:
    """One day of (time, Np) samples, deterministic in the date."""
    lines = ["time,Np"]
    for k in range(rows):
        t = day + timedelta(hours=24 * k / rows)
        v = 4.0 + (day.day % 7) * 0.25 + 0.1 * k
        lines.append(f"{t.strftime('%Y-%m-%dT%H:%M')},{v}")
    path.write_text("\n".join(lines) + "\n")


@pytest.fixture
def june_tree(tmp_path) -> Path:
    """$Y/ac_k0_swe_$Y$m$d_v02.cdf tree: CSV bodies for May-July 2008."""
    root = tmp_path / "tree"
    for month, days in ((5, 31), (6, 30), (7, 31)):
        for day in range(1, days + 1):
            d = datetime(2008, month, day, tzinfo=UTC)
            dir_ = root / f"{d.year:04d}"
            dir_.mkdir(parents=True, exist_ok=True)
            write_daily_csv(dir_ / f"ac_k0_swe_{d:%Y%m%d}_v02.cdf", d)
    return root


@pytest.fixture
def ascii_file(tmp_path) -> Path:
    """Five junk lines, then a header, then comma-separated rows."""
    p = tmp_path / "table.csv"
    lines = [f"junk line {i}" for i in range(5)]
    lines.append("time,density,speed")
    for k in range(12):
        t = datetime(2008, 6, 1, k, tzinfo=UTC)
        lines.append(f"{t.strftime('%Y-%m-%dT%H:%M')},{2.0 + 0.5 * k},{400 + 10 * k}")
    p.write_text("\n".join(lines) + "\n")
    return p


@pytest.fixture
def rows287_file(tmp_path) -> Path:
    """287 data rows in a column named "data"."""
    p = tmp_path / "swe-np.csv"
    lines = ["data"]
    lines.extend(f"{1.0 + 0.01 * k}" for k in range(287))
    p.write_text("\n".join(lines) + "\n")
    return p


class CountingHandler(SimpleHTTPRequestHandler):
    """Serves a directory and counts GET requests per path."""

    def log_message(self, fmt, *args):
        pass

    def do_GET(self):
        with self.server.count_lock:
            self.server.request_counts[self.path] = (
                self.server.request_counts.get(self.path, 0) + 1)
        super().do_GET()


class StubServer:
    def __init__(self, directory: Path):
        handler = partial(CountingHandler, directory=str(directory))
        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), handler)
        self.httpd.request_counts = {}
        self.httpd.count_lock = threading.Lock()
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address
        return f"http://{host}:{port}"

    def count(self, path: str) -> int:
        with self.httpd.count_lock:
            return self.httpd.request_counts.get(path, 0)

    def total(self) -> int:
        with self.httpd.count_lock:
            return sum(self.httpd.request_counts.values())

    def stop(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def stub_server(tmp_path):
    root = tmp_path / "www"
    root.mkdir()
    server = StubServer(root)
    server.root = root
    yield server
    server.stop()


@pytest.fixture
def local_vfs(tmp_path):
    from databrowse.vfs import Vfs
    return Vfs(cache_dir=tmp_path / "cache")
