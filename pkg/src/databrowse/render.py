"""Autoranging, tick generation, and plot rendering to PNG and SVG.

Rendering is a pure function of (DOM snapshot, datasets): identical
inputs produce byte-identical SVG text and pixel-identical PNG bytes.
Series polylines break at invalid samples, spectrogram cells map through
a 256-entry blue-to-red color table with invalid cells transparent, and
a DEPEND_1 carrying SCALE_TYPE=log selects a log y axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Optional

import numpy as np

from . import qdataset as qds
from .chrono import EPOCH_1970, instant_to_ms
from .qdataset import DatumRange, QDataSet, Units, convert_values
from .raster import GLYPH_H, GLYPH_W, Raster, encode_png, text_width

__all__ = [
    "autorange",
    "autorange_dataset",
    "ticks",
    "TickSet",
    "render_type_default",
    "render_canvas",
    "plot_boxes",
    "RenderError",
]

PAD_FRACTION = 0.05
MS_1970 = Units("milliseconds since 1970-01-01T00:00")

MARGIN_LEFT = 70
MARGIN_RIGHT = 20
MARGIN_RIGHT_COLORBAR = 84
MARGIN_TOP = 28
MARGIN_BOTTOM = 40

FG = (0, 0, 0, 255)
BG = (255, 255, 255, 255)
GRID = (208, 208, 208, 255)


class RenderError(ValueError):
    """The scene cannot be rasterized (unresolved or malformed data)."""


# ---------------------------------------------------------------------------
# Autoranging
# ---------------------------------------------------------------------------

def autorange(values, scale: str = "linear", weights=None,
              units: Units | None = None) -> DatumRange:
    """[min, max] over valid elements, padded 5% per side.

    Zero span expands to +-0.5 (linear) or one decade (log).  Invalid
    elements never affect the result.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    ok = np.isfinite(v)
    if weights is not None:
        ok &= np.asarray(weights, dtype=np.float64).ravel() > 0
    if scale == "log":
        ok &= v > 0
    v = v[ok]
    if v.size == 0:
        raise RenderError("no valid data to range over"
                          + (" (log scale needs positive values)" if scale == "log" else ""))
    lo, hi = float(np.min(v)), float(np.max(v))
    u = units or qds.DIMENSIONLESS
    if scale == "log":
        llo, lhi = math.log10(lo), math.log10(hi)
        if llo == lhi:
            llo, lhi = llo - 0.5, lhi + 0.5
        else:
            pad = (lhi - llo) * PAD_FRACTION
            llo, lhi = llo - pad, lhi + pad
        return DatumRange(10.0 ** llo, 10.0 ** lhi, u)
    if lo == hi:
        return DatumRange(lo - 0.5, hi + 0.5, u)
    pad = (hi - lo) * PAD_FRACTION
    return DatumRange(lo - pad, hi + pad, u)


def render_type_default(ds: QDataSet) -> str:
    """Pick a render type from the data shape."""
    if ds.rank == 2 and not ds.is_ragged:
        if ds.property(qds.DEPEND_1) is not None:
            return "spectrogram"
        if ds.property(qds.BUNDLE_1) is not None:
            return "series"
        return "spectrogram" if ds.property(qds.QUBE) else "series"
    dep0 = ds.property(qds.DEPEND_0)
    if ds.rank == 1 and dep0 is not None:
        t = dep0.values
        if np.all(np.diff(t) >= 0):
            return "series"
        return "scatter"
    return "series"


def _depend0_range(ds: QDataSet) -> DatumRange:
    dep0 = ds.property(qds.DEPEND_0)
    if dep0 is not None:
        return autorange(dep0.values, "linear", qds.validity(dep0), dep0.units)
    n = len(ds) if ds.rank >= 1 else 1
    return autorange(np.arange(max(n, 2), dtype=np.float64), "linear")


def autorange_dataset(ds: QDataSet, render_type: str):
    """Initial axis configuration for a dataset.

    Returns (xrange, yrange, zrange, y_is_log, title, ylabel, xlabel).
    """
    title = str(ds.property(qds.TITLE) or "")
    name = str(ds.property(qds.LABEL) or ds.property(qds.NAME) or "")
    xlabel = ""
    dep0 = ds.property(qds.DEPEND_0)
    if dep0 is not None and not dep0.units.is_time_location:
        xlabel = str(dep0.property(qds.LABEL) or dep0.property(qds.NAME) or "")
        if dep0.units.label:
            xlabel = f"{xlabel} ({dep0.units.label})" if xlabel else dep0.units.label
    try:
        xr = _depend0_range(ds)
    except RenderError:
        xr = DatumRange(0.0, 1.0)
    if render_type == "spectrogram" and ds.rank == 2:
        dep1 = ds.property(qds.DEPEND_1)
        ylog = bool(dep1 is not None
                    and str(dep1.property(qds.SCALE_TYPE) or "") == "log")
        if dep1 is not None:
            yr = autorange(dep1.values, "log" if ylog else "linear",
                           qds.validity(dep1), dep1.units)
            ylabel = str(dep1.property(qds.LABEL) or dep1.property(qds.NAME) or "")
            if dep1.units.label:
                ylabel = f"{ylabel} ({dep1.units.label})" if ylabel else dep1.units.label
        else:
            yr = autorange(np.arange(ds.shape[1], dtype=np.float64), "linear")
            ylabel = ""
        zlog = str(ds.property(qds.SCALE_TYPE) or "") == "log"
        try:
            zr = autorange(ds.values, "log" if zlog else "linear",
                           qds.validity(ds), ds.units)
        except RenderError:
            zr = DatumRange(0.0, 1.0, ds.units)
        return xr, yr, zr, ylog, title or name, ylabel, xlabel
    ylog = str(ds.property(qds.SCALE_TYPE) or "") == "log"
    try:
        if ds.is_ragged:
            allvals = np.concatenate([ds.row(i) for i in range(len(ds))])
            yr = autorange(allvals, "log" if ylog else "linear", None, ds.units)
        else:
            yr = autorange(ds.values, "log" if ylog else "linear",
                           qds.validity(ds), ds.units)
    except RenderError:
        yr = DatumRange(0.0, 1.0, ds.units)
    ylabel = name
    if ds.units.label:
        ylabel = f"{ylabel} ({ds.units.label})" if ylabel else ds.units.label
    return xr, yr, None, ylog, title, ylabel, xlabel


# ---------------------------------------------------------------------------
# Ticks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TickSet:
    majors: tuple
    minors: tuple
    labels: tuple          # display labels (time labels are abbreviated)
    isotexts: tuple        # fully parseable text per major tick
    context: str = ""      # date line shown once on time axes


def _linear_ticks(lo: float, hi: float) -> tuple:
    """1-2-5 step whose major count lands in 4..8 (closest to 6 otherwise)."""
    span = hi - lo
    best = None
    candidates = []
    for k in range(-12, 13):
        for m in (1.0, 2.0, 5.0):
            step = m * 10.0 ** k
            if span / step > 40 or span / step < 1:
                continue
            first = math.ceil(lo / step - 1e-9) * step
            count = int(math.floor((hi - first) / step + 1e-9)) + 1
            candidates.append((step, first, count))
    in_range = [c for c in candidates if 4 <= c[2] <= 8]
    if in_range:
        step, first, count = max(in_range, key=lambda c: c[0])
    elif candidates:
        step, first, count = min(candidates, key=lambda c: abs(c[2] - 6))
    else:
        step, first, count = span, lo, 2
    majors = [first + i * step for i in range(count)]
    minor_step = step / 5.0
    minors = []
    m0 = math.ceil(lo / minor_step - 1e-9) * minor_step
    t = m0
    while t <= hi + minor_step * 1e-9:
        minors.append(t)
        t += minor_step
    decimals = max(0, -int(math.floor(math.log10(step))))
    labels = [f"{v:.{decimals}f}" for v in majors]
    # normalize "-0" and excess zeros
    labels = [l if l != f"{-0:.{decimals}f}" or float(l) != 0 else f"{0:.{decimals}f}"
              for l in labels]
    return majors, minors, labels


def _log_ticks(lo: float, hi: float) -> tuple:
    d0, d1 = math.ceil(math.log10(lo) - 1e-9), math.floor(math.log10(hi) + 1e-9)
    stride = max(1, (d1 - d0) // 8 + (1 if (d1 - d0) % 8 else 0)) if d1 > d0 else 1
    majors = [10.0 ** k for k in range(d0, d1 + 1, stride)]
    minors = []
    if d1 - d0 <= 10:
        for k in range(d0 - 1, d1 + 1):
            for m in range(2, 10):
                v = m * 10.0 ** k
                if lo <= v <= hi:
                    minors.append(v)
    labels = [f"{v:g}" for v in majors]
    return majors, minors, labels


_MS = 1.0
_SEC = 1000.0
_MIN = 60 * _SEC
_HOUR = 60 * _MIN
_DAY = 24 * _HOUR

_TIME_STEPS_MS = [
    1 * _MS, 2 * _MS, 5 * _MS, 10 * _MS, 20 * _MS, 50 * _MS, 100 * _MS,
    200 * _MS, 500 * _MS,
    1 * _SEC, 2 * _SEC, 5 * _SEC, 10 * _SEC, 15 * _SEC, 30 * _SEC,
    1 * _MIN, 2 * _MIN, 5 * _MIN, 10 * _MIN, 15 * _MIN, 30 * _MIN,
    1 * _HOUR, 2 * _HOUR, 3 * _HOUR, 6 * _HOUR, 12 * _HOUR,
    1 * _DAY, 2 * _DAY, 5 * _DAY, 10 * _DAY,
]
# month/year steps are handled by calendar walking
_MONTH_STEPS = [1, 2, 3, 6]
_YEAR_STEPS = [1, 2, 5, 10, 20, 50, 100]

_TIME_TARGET_LO, _TIME_TARGET_HI = 6, 14


def _ms_to_dt(ms: float) -> datetime:
    return EPOCH_1970 + timedelta(milliseconds=ms)


def _time_label(t: datetime, step_ms: float) -> str:
    if step_ms >= _DAY:
        return t.strftime("%m-%d")
    if step_ms >= _MIN:
        return t.strftime("%H:%M")
    if step_ms >= _SEC:
        return t.strftime("%H:%M:%S")
    return t.strftime("%S.%f")[:-3]


def _time_isotext(t: datetime) -> str:
    if t.microsecond:
        return t.strftime("%Y-%m-%dT%H:%M:%S.") + f"{t.microsecond // 1000:03d}"
    if t.second:
        return t.strftime("%Y-%m-%dT%H:%M:%S")
    return t.strftime("%Y-%m-%dT%H:%M")


def _month_ticks(lo_ms: float, hi_ms: float) -> Optional[tuple]:
    span_months = (hi_ms - lo_ms) / (30 * _DAY)
    for step in _MONTH_STEPS:
        if _TIME_TARGET_LO <= span_months / step + 1 <= _TIME_TARGET_HI:
            t = _ms_to_dt(lo_ms).replace(day=1, hour=0, minute=0, second=0, microsecond=0)
            majors = []
            while instant_to_ms(t) <= hi_ms:
                ms = instant_to_ms(t)
                if ms >= lo_ms:
                    majors.append(float(ms))
                month_index = (t.year * 12 + t.month - 1) + step
                t = t.replace(year=month_index // 12, month=month_index % 12 + 1)
            if len(majors) >= 2:
                labels = [_ms_to_dt(m).strftime("%Y-%m") for m in majors]
                iso = [_time_isotext(_ms_to_dt(m)) for m in majors]
                return majors, [], labels, iso
    return None


def _year_ticks(lo_ms: float, hi_ms: float) -> tuple:
    y0, y1 = _ms_to_dt(lo_ms).year, _ms_to_dt(hi_ms).year + 1
    step = 1
    for s in _YEAR_STEPS:
        if (y1 - y0) / s <= _TIME_TARGET_HI:
            step = s
            break
    majors = []
    y = y0 - y0 % step
    while y <= y1:
        ms = instant_to_ms(datetime(y, 1, 1, tzinfo=timezone.utc))
        if lo_ms <= ms <= hi_ms:
            majors.append(float(ms))
        y += step
    if len(majors) < 2:
        majors = [lo_ms, hi_ms]
    labels = [_ms_to_dt(m).strftime("%Y") for m in majors]
    iso = [_time_isotext(_ms_to_dt(m)) for m in majors]
    return majors, [], labels, iso


def _time_ticks(rng: DatumRange) -> TickSet:
    ms_units = MS_1970
    lo = float(convert_values(rng.minimum, rng.units, ms_units))
    hi = float(convert_values(rng.maximum, rng.units, ms_units))
    span = hi - lo
    chosen = None
    for step in _TIME_STEPS_MS:
        count = span / step + 1
        if _TIME_TARGET_LO <= count <= _TIME_TARGET_HI:
            chosen = step
            break
    if chosen is None and span / _TIME_STEPS_MS[-1] > _TIME_TARGET_HI:
        monthly = _month_ticks(lo, hi)
        result = monthly if monthly is not None else _year_ticks(lo, hi)
        majors, minors, labels, iso = result
    else:
        if chosen is None:
            chosen = min(_TIME_STEPS_MS, key=lambda s: abs(span / s + 1 - 8))
        first = math.ceil(lo / chosen) * chosen
        majors = []
        t = first
        while t <= hi + chosen * 1e-9:
            majors.append(t)
            t += chosen
        minors = []
        ms = chosen / 2
        t = math.ceil(lo / ms) * ms
        while t <= hi + ms * 1e-9:
            if not any(abs(t - M) < 1e-6 for M in majors):
                minors.append(t)
            t += ms
        labels = [_time_label(_ms_to_dt(m), chosen) for m in majors]
        iso = [_time_isotext(_ms_to_dt(m)) for m in majors]
    context = _ms_to_dt(lo).strftime("%Y-%m-%d") if span < 32 * _DAY else ""
    back = rng.units
    majors_u = [float(convert_values(m, ms_units, back)) for m in majors]
    minors_u = [float(convert_values(m, ms_units, back)) for m in minors]
    return TickSet(tuple(majors_u), tuple(minors_u), tuple(labels),
                   tuple(iso), context)


def ticks(rng: DatumRange, scale: str = "linear") -> TickSet:
    """Major/minor tick positions and labels for an axis range."""
    if rng.units.is_time_location:
        return _time_ticks(rng)
    if scale == "log":
        if rng.minimum <= 0:
            raise RenderError("log axis requires a positive range")
        majors, minors, labels = _log_ticks(rng.minimum, rng.maximum)
    else:
        majors, minors, labels = _linear_ticks(rng.minimum, rng.maximum)
    return TickSet(tuple(majors), tuple(minors), tuple(labels), tuple(labels))


# ---------------------------------------------------------------------------
# Color table
# ---------------------------------------------------------------------------

def _build_color_table() -> np.ndarray:
    """256-entry blue-to-red table."""
    t = np.linspace(0.0, 1.0, 256)
    table = np.zeros((256, 4), dtype=np.uint8)
    table[:, 0] = np.round(255 * t)
    table[:, 2] = np.round(255 * (1.0 - t))
    table[:, 1] = np.round(96 * np.sin(np.pi * t))  # slight green lift mid-table
    table[:, 3] = 255
    return table


COLOR_TABLE = _build_color_table()


def _parse_color(text: str) -> tuple:
    t = text.strip().lstrip("#")
    if len(t) == 6:
        return (int(t[0:2], 16), int(t[2:4], 16), int(t[4:6], 16), 255)
    return (0, 0, 192, 255)


# ---------------------------------------------------------------------------
# Layout
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _Box:
    x: int
    y: int
    w: int
    h: int


def _layout(dom) -> dict:
    """Outer pixel cell per plot id, from row/column weights."""
    canvas = dom.node("canvas")
    width, height = canvas.props["width"], canvas.props["height"]
    rows = canvas.props["rows"]
    cols = canvas.props["columns"] or ()
    row_weights = [dom.node(r).props["weight"] for r in rows] or [1.0]
    col_weights = [dom.node(c).props["weight"] for c in cols] or [1.0]
    total_rw = sum(row_weights)
    total_cw = sum(col_weights)
    boxes = {}
    y = 0.0
    row_span = {}
    for rid, wgt in zip(rows or ("",), row_weights):
        h = height * wgt / total_rw
        row_span[rid] = (int(round(y)), int(round(y + h)))
        y += h
    x = 0.0
    col_span = {}
    for cid, wgt in zip(cols or ("",), col_weights):
        w = width * wgt / total_cw
        col_span[cid] = (int(round(x)), int(round(x + w)))
        x += w
    for plot in dom.nodes_of_kind("plot"):
        r = plot.props["row"]
        c = plot.props["column"]
        y0, y1 = row_span.get(r, (0, height))
        x0, x1 = col_span.get(c, (0, width))
        boxes[plot.id] = _Box(x0, y0, x1 - x0, y1 - y0)
    return boxes


def _data_box(outer: _Box, has_colorbar: bool) -> _Box:
    right = MARGIN_RIGHT_COLORBAR if has_colorbar else MARGIN_RIGHT
    return _Box(outer.x + MARGIN_LEFT, outer.y + MARGIN_TOP,
                max(outer.w - MARGIN_LEFT - right, 16),
                max(outer.h - MARGIN_TOP - MARGIN_BOTTOM, 16))


def plot_boxes(dom) -> dict:
    """Data-area pixel box per plot id: {id: (x, y, w, h)}, y axis down."""
    out = {}
    for plot in dom.nodes_of_kind("plot"):
        has_cb = any(e.props["renderType"] == "spectrogram"
                     for e in dom.elements_of_plot(plot.id))
        box = _data_box(_layout(dom)[plot.id], has_cb)
        out[plot.id] = (box.x, box.y, box.w, box.h)
    return out


class _AxisMap:
    """Maps data values to pixels for one axis."""

    def __init__(self, rng: DatumRange, scale: str, px0: float, px1: float):
        self.units = rng.units
        self.log = scale == "log" and not rng.units.is_time_location
        if self.log:
            if rng.minimum <= 0:
                raise RenderError("log axis requires positive range")
            self.v0, self.v1 = math.log10(rng.minimum), math.log10(rng.maximum)
        else:
            self.v0, self.v1 = rng.minimum, rng.maximum
        self.px0, self.px1 = px0, px1

    def to_px(self, values):
        v = np.asarray(values, dtype=np.float64)
        if self.log:
            with np.errstate(divide="ignore", invalid="ignore"):
                v = np.log10(v)
        frac = (v - self.v0) / (self.v1 - self.v0)
        return self.px0 + frac * (self.px1 - self.px0)

    def from_px(self, px):
        frac = (np.asarray(px, dtype=np.float64) - self.px0) / (self.px1 - self.px0)
        v = self.v0 + frac * (self.v1 - self.v0)
        return 10.0 ** v if self.log else v


# ---------------------------------------------------------------------------
# Scene construction (shared by PNG and SVG backends)
# ---------------------------------------------------------------------------

class _Scene:
    """Draw list with two backends; keeps PNG and SVG geometry identical."""

    def __init__(self, width: int, height: int):
        self.width = width
        self.height = height
        self.ops: list = []

    def rect(self, x, y, w, h, color):
        self.ops.append(("rect", x, y, w, h, color))

    def line(self, x0, y0, x1, y1, color, width=1):
        self.ops.append(("line", x0, y0, x1, y1, color, width))

    def polyline(self, pts, color, width=1):
        if len(pts) >= 2:
            self.ops.append(("polyline", tuple(pts), color, width))

    def text(self, x, y, s, color, anchor="start", scale=1):
        if s:
            self.ops.append(("text", x, y, s, color, anchor, scale))

    def image(self, x, y, rgba):
        self.ops.append(("image", x, y, rgba))

    # -- PNG backend ---------------------------------------------------------

    def to_png(self) -> bytes:
        r = Raster(self.width, self.height, BG)
        for op in self.ops:
            kind = op[0]
            if kind == "rect":
                _, x, y, w, h, color = op
                r.fill_rect(x, y, w, h, color)
            elif kind == "line":
                _, x0, y0, x1, y1, color, width = op
                r.line(x0, y0, x1, y1, color, width)
            elif kind == "polyline":
                _, pts, color, width = op
                for (xa, ya), (xb, yb) in zip(pts, pts[1:]):
                    r.line(xa, ya, xb, yb, color, width)
            elif kind == "text":
                _, x, y, s, color, anchor, scale = op
                if anchor == "middle":
                    r.text_centered(int(x), int(y), s, color, scale)
                elif anchor == "end":
                    r.text_right(int(x), int(y), s, color, scale)
                else:
                    r.text(int(x), int(y), s, color, scale)
            elif kind == "image":
                _, x, y, rgba = op
                r.blit_rgba(int(x), int(y), rgba)
        return r.to_png()

    # -- SVG backend ---------------------------------------------------------

    def to_svg(self) -> bytes:
        from base64 import b64encode
        from xml.sax.saxutils import escape

        def css(color):
            r_, g, b, a = color
            return f"rgb({r_},{g},{b})"

        parts = [
            '<?xml version="1.0" encoding="UTF-8"?>',
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
            f'height="{self.height}" viewBox="0 0 {self.width} {self.height}" '
            'version="1.1">',
            f'<rect x="0" y="0" width="{self.width}" height="{self.height}" '
            'fill="rgb(255,255,255)"/>',
        ]
        for op in self.ops:
            kind = op[0]
            if kind == "rect":
                _, x, y, w, h, color = op
                parts.append(
                    f'<rect x="{x:.1f}" y="{y:.1f}" width="{w:.1f}" '
                    f'height="{h:.1f}" fill="{css(color)}"/>')
            elif kind == "line":
                _, x0, y0, x1, y1, color, width = op
                parts.append(
                    f'<line x1="{x0:.1f}" y1="{y0:.1f}" x2="{x1:.1f}" '
                    f'y2="{y1:.1f}" stroke="{css(color)}" stroke-width="{width}"/>')
            elif kind == "polyline":
                _, pts, color, width = op
                coords = " ".join(f"{x:.1f},{y:.1f}" for x, y in pts)
                parts.append(
                    f'<polyline points="{coords}" fill="none" '
                    f'stroke="{css(color)}" stroke-width="{width}"/>')
            elif kind == "text":
                _, x, y, s, color, anchor, scale = op
                size = 7 * scale + 3
                parts.append(
                    f'<text x="{x:.1f}" y="{y + 7 * scale:.1f}" '
                    f'font-family="monospace" font-size="{size}" '
                    f'text-anchor="{anchor}" fill="{css(color)}">{escape(s)}</text>')
            elif kind == "image":
                _, x, y, rgba = op
                png = encode_png(rgba)
                b64 = b64encode(png).decode("ascii")
                h, w, _ = rgba.shape
                parts.append(
                    f'<image x="{x}" y="{y}" width="{w}" height="{h}" '
                    f'href="data:image/png;base64,{b64}" '
                    'preserveAspectRatio="none"/>')
        parts.append("</svg>")
        return ("\n".join(parts) + "\n").encode("utf-8")


# ---------------------------------------------------------------------------
# Plot drawing
# ---------------------------------------------------------------------------

def _boundaries(centers: np.ndarray, bins: Optional[QDataSet]) -> np.ndarray:
    """Cell edges: BINS-specified, else midpoints clamped at the ends."""
    if bins is not None and bins.rank == 2 and bins.shape[1] == 2:
        edges = np.empty(len(centers) + 1, dtype=np.float64)
        edges[:-1] = bins.values[:, 0]
        edges[-1] = bins.values[-1, 1]
        return edges
    if len(centers) == 1:
        c = float(centers[0])
        return np.array([c - 0.5, c + 0.5])
    mid = (centers[:-1] + centers[1:]) / 2.0
    first = centers[0] - (mid[0] - centers[0])
    last = centers[-1] + (centers[-1] - mid[-1])
    return np.concatenate([[first], mid, [last]])


def _cell_indices(centers: np.ndarray, coords: np.ndarray,
                  bins: Optional[QDataSet] = None) -> np.ndarray:
    """Cell index per data-space coordinate, or -1 outside every cell."""
    perm = np.argsort(centers, kind="stable")
    sorted_centers = centers[perm]
    if bins is not None and bins.rank == 2 and bins.shape[1] == 2:
        sorted_bins = bins.values[perm]
        edges = np.empty(len(centers) + 1, dtype=np.float64)
        edges[:-1] = sorted_bins[:, 0]
        edges[-1] = sorted_bins[-1, 1]
    else:
        edges = _boundaries(sorted_centers, None)
    pos = np.searchsorted(edges, coords, side="right") - 1
    valid = (pos >= 0) & (pos < len(centers))
    safe = np.clip(pos, 0, len(centers) - 1)
    return np.where(valid, perm[safe], -1)


def _spectrogram_rgba(ds: QDataSet, xmap: _AxisMap, ymap: _AxisMap,
                      zrange: DatumRange, zlog: bool, box: _Box) -> np.ndarray:
    dep0 = ds.property(qds.DEPEND_0)
    dep1 = ds.property(qds.DEPEND_1)
    if ds.is_ragged:
        raise RenderError("ragged rank-2 needs per-record DEPEND_1; not renderable")
    vals = ds.values
    n0, n1 = vals.shape
    if dep0 is not None:
        t = np.asarray(convert_values(dep0.values, dep0.units, xmap.units),
                       dtype=np.float64)
    else:
        t = np.arange(n0, dtype=np.float64)
    if (dep1 is not None and dep1.rank == 2
            and dep1.property(qds.BINS_1) is not None):
        y_centers = dep1.values.mean(axis=1)
        y_bins = dep1
    else:
        y_centers = (dep1.values if dep1 is not None
                     else np.arange(n1, dtype=np.float64))
        y_bins = None
    # cell lookup happens in data space: pixel centers map back through the
    # axis, then binary-search the (sorted) cell boundaries
    px_x = np.arange(box.w) + box.x + 0.5
    px_y = np.arange(box.h) + box.y + 0.5
    xi = _cell_indices(t, np.asarray(xmap.from_px(px_x)))
    yi = _cell_indices(np.asarray(y_centers, dtype=np.float64),
                       np.asarray(ymap.from_px(px_y)), y_bins)
    weights = qds.validity(ds)
    lo = math.log10(zrange.minimum) if zlog else zrange.minimum
    hi = math.log10(zrange.maximum) if zlog else zrange.maximum
    zvals = vals
    if zlog:
        with np.errstate(divide="ignore", invalid="ignore"):
            zvals = np.log10(np.where(vals > 0, vals, np.nan))
        weights = weights * np.isfinite(zvals)
    with np.errstate(invalid="ignore"):
        idx = np.clip((zvals - lo) / (hi - lo) * 255.0, 0, 255)
    idx = np.where(np.isfinite(idx), idx, 0).astype(np.intp)
    colors = COLOR_TABLE[idx]  # (n0, n1, 4)
    colors[weights <= 0] = (0, 0, 0, 0)
    block = colors[np.clip(xi, 0, n0 - 1)[None, :],
                   np.clip(yi, 0, n1 - 1)[:, None]]
    block[yi < 0, :] = (0, 0, 0, 0)
    block[:, xi < 0] = (0, 0, 0, 0)
    return block


def _draw_colorbar(scene: _Scene, box: _Box, zrange: DatumRange, zlog: bool):
    bar_x = box.x + box.w + 10
    bar_w = 12
    grad = np.zeros((box.h, bar_w, 4), dtype=np.uint8)
    ramp = np.linspace(255, 0, box.h).astype(np.intp)
    grad[:, :] = COLOR_TABLE[ramp][:, None, :]
    scene.image(bar_x, box.y, grad)
    scene.line(bar_x, box.y, bar_x, box.y + box.h, FG)
    scene.line(bar_x + bar_w, box.y, bar_x + bar_w, box.y + box.h, FG)
    top = f"{zrange.maximum:.3g}"
    bot = f"{zrange.minimum:.3g}"
    scene.text(bar_x + bar_w + 2, box.y, top, FG)
    scene.text(bar_x + bar_w + 2, box.y + box.h - GLYPH_H, bot, FG)


def _draw_axes(scene: _Scene, box: _Box, xr: DatumRange, yr: DatumRange,
               xscale: str, yscale: str, xlabel: str, ylabel: str, title: str):
    scene.rect(box.x, box.y, box.w, 1, FG)
    scene.rect(box.x, box.y + box.h, box.w + 1, 1, FG)
    scene.rect(box.x, box.y, 1, box.h, FG)
    scene.rect(box.x + box.w, box.y, 1, box.h + 1, FG)
    xmap = _AxisMap(xr, xscale, box.x, box.x + box.w)
    ymap = _AxisMap(yr, yscale, box.y + box.h, box.y)
    xt = ticks(xr, xscale)
    for v, label in zip(xt.majors, xt.labels):
        px = float(xmap.to_px(v))
        if not box.x - 0.5 <= px <= box.x + box.w + 0.5:
            continue
        scene.line(px, box.y + box.h, px, box.y + box.h + 5, FG)
        scene.text(px, box.y + box.h + 8, label, FG, anchor="middle")
    for v in xt.minors:
        px = float(xmap.to_px(v))
        if box.x <= px <= box.x + box.w:
            scene.line(px, box.y + box.h, px, box.y + box.h + 3, FG)
    if xt.context:
        scene.text(box.x, box.y + box.h + 8 + GLYPH_H + 2, xt.context, FG)
    elif xlabel:
        scene.text(box.x + box.w / 2, box.y + box.h + 8 + GLYPH_H + 2,
                   xlabel, FG, anchor="middle")
    yt = ticks(yr, yscale)
    for v, label in zip(yt.majors, yt.labels):
        py = float(ymap.to_px(v))
        if not box.y - 0.5 <= py <= box.y + box.h + 0.5:
            continue
        scene.line(box.x - 5, py, box.x, py, FG)
        scene.text(box.x - 7, py - GLYPH_H // 2 + 1, label, FG, anchor="end")
    for v in yt.minors:
        py = float(ymap.to_px(v))
        if box.y <= py <= box.y + box.h:
            scene.line(box.x - 3, py, box.x, py, FG)
    if ylabel:
        scene.text(box.x - 7, box.y - GLYPH_H - 4, ylabel, FG, anchor="end")
    if title:
        scene.text(box.x + box.w / 2, box.y - GLYPH_H - 4, title, FG,
                   anchor="middle", scale=1)
    return xmap, ymap


def _element_series(scene, ds, xmap, ymap, color, width, render_type, box):
    dep0 = ds.property(qds.DEPEND_0)
    if dep0 is not None:
        x = convert_values(dep0.values, dep0.units, xmap.units)
    else:
        x = np.arange(len(ds), dtype=np.float64)
    y = ds.values
    w = qds.validity(ds)
    if ymap.log:
        w = w * (y > 0)
    xp = xmap.to_px(x)
    yp = ymap.to_px(y)
    inside = (w > 0) & np.isfinite(xp) & np.isfinite(yp)
    if render_type == "scatter":
        for k in range(len(y)):
            if inside[k] and box.x <= xp[k] <= box.x + box.w:
                scene.rect(xp[k] - 1, yp[k] - 1, 3, 3, color)
        return
    if render_type == "histogram":
        base = ymap.to_px(max(ymap.v0, 0.0) if not ymap.log else 10 ** ymap.v0)
        edges = _boundaries(np.asarray(x), None)
        epx = xmap.to_px(edges)
        for k in range(len(y)):
            if not inside[k]:
                continue
            x0, x1 = sorted((float(epx[k]), float(epx[k + 1])))
            x0 = max(x0, box.x)
            x1 = min(x1, box.x + box.w)
            if x1 <= x0:
                continue
            y0, y1 = sorted((float(yp[k]), float(base)))
            scene.rect(x0, y0, max(x1 - x0 - 1, 1), max(y1 - y0, 1), color)
        return
    run: list = []
    for k in range(len(y)):
        if inside[k]:
            px = min(max(xp[k], box.x - 2), box.x + box.w + 2)
            py = min(max(yp[k], box.y - 2), box.y + box.h + 2)
            run.append((float(px), float(py)))
        else:
            scene.polyline(run, color, width)  # break the polyline at invalid points
            run = []
    scene.polyline(run, color, width)


def _render_plot(scene: _Scene, dom, plot) -> None:
    elements = [e for e in dom.elements_of_plot(plot.id) if e.props["visible"]]
    has_spectrogram = any(e.props["renderType"] == "spectrogram" for e in elements)
    outer = _layout(dom)[plot.id]
    box = _data_box(outer, has_spectrogram)
    xaxis = dom.node(plot.props["xaxis"])
    yaxis = dom.node(plot.props["yaxis"])
    zaxis = dom.node(plot.props["zaxis"])
    xr, yr = xaxis.props["range"], yaxis.props["range"]
    xmap, ymap = _draw_axes(
        scene, box, xr, yr, xaxis.props["scale"], yaxis.props["scale"],
        xaxis.props["label"], yaxis.props["label"], plot.props["title"])
    for e in elements:
        if e.props["status"].startswith("error"):
            scene.text(box.x + 4, box.y + 4, e.props["status"], (192, 0, 0, 255))
            continue
        if e.props["componentIndex"] < 0 and dom.children_of(e.id):
            continue  # invisible parent; children drawn individually
        try:
            ds = dom.dataset_for(e.id)
        except Exception as exc:
            scene.text(box.x + 4, box.y + 4, f"error: {exc}", (192, 0, 0, 255))
            continue
        rt = e.props["renderType"]
        color = _parse_color(e.props["color"])
        if rt == "spectrogram":
            if ds.rank != 2:
                raise RenderError(f"spectrogram needs rank-2 data, got rank {ds.rank}")
            zr = zaxis.props["range"]
            zlog = str(ds.property(qds.SCALE_TYPE) or "") == "log"
            block = _spectrogram_rgba(ds, xmap, ymap, zr, zlog, box)
            scene.image(box.x, box.y, block)
            _draw_colorbar(scene, box, zr, zlog)
        else:
            _element_series(scene, ds, xmap, ymap, color,
                            max(int(e.props["lineWidth"]), 1), rt, box)


def render_canvas(dom, fmt: str = "png") -> bytes:
    """Rasterize every plot in the DOM to PNG bytes or SVG text."""
    canvas = dom.node("canvas")
    scene = _Scene(canvas.props["width"], canvas.props["height"])
    for plot in dom.nodes_of_kind("plot"):
        _render_plot(scene, dom, plot)
    if fmt == "svg":
        return scene.to_svg()
    if fmt == "png":
        return scene.to_png()
    raise RenderError(f"unknown format {fmt!r}; use png or svg")
