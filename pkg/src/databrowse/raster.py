"""Software rasterizer: RGBA image, 5x7 bitmap font, deterministic PNG.

Rendering avoids every platform-dependent drawing path so that identical
scenes produce byte-identical PNG files.  Text uses an embedded 5x7
monospaced bitmap font laid out by horizontal metrics only.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

__all__ = ["Raster", "encode_png", "text_width", "GLYPH_W", "GLYPH_H"]

GLYPH_W = 6  # 5 pixel columns + 1 spacing
GLYPH_H = 8  # 7 pixel rows + 1 spacing

# Classic public-domain 5x7 font, ASCII 32..126. Five column bytes per
# glyph; bit k of a column is pixel row k (top row = bit 0).
_FONT_BYTES: dict[int, bytes] = {}


def _f(ch: str, *cols: int) -> None:
    _FONT_BYTES[ord(ch)] = bytes(cols)


_f(" ", 0x00, 0x00, 0x00, 0x00, 0x00)
_f("!", 0x00, 0x00, 0x5F, 0x00, 0x00)
_f('"', 0x00, 0x07, 0x00, 0x07, 0x00)
_f("#", 0x14, 0x7F, 0x14, 0x7F, 0x14)
_f("$", 0x24, 0x2A, 0x7F, 0x2A, 0x12)
_f("%", 0x23, 0x13, 0x08, 0x64, 0x62)
_f("&", 0x36, 0x49, 0x55, 0x22, 0x50)
_f("'", 0x00, 0x05, 0x03, 0x00, 0x00)
_f("(", 0x00, 0x1C, 0x22, 0x41, 0x00)
_f(")", 0x00, 0x41, 0x22, 0x1C, 0x00)
_f("*", 0x08, 0x2A, 0x1C, 0x2A, 0x08)
_f("+", 0x08, 0x08, 0x3E, 0x08, 0x08)
_f(",", 0x00, 0x50, 0x30, 0x00, 0x00)
_f("-", 0x08, 0x08, 0x08, 0x08, 0x08)
_f(".", 0x00, 0x60, 0x60, 0x00, 0x00)
_f("/", 0x20, 0x10, 0x08, 0x04, 0x02)
_f("0", 0x3E, 0x51, 0x49, 0x45, 0x3E)
_f("1", 0x00, 0x42, 0x7F, 0x40, 0x00)
_f("2", 0x42, 0x61, 0x51, 0x49, 0x46)
_f("3", 0x21, 0x41, 0x45, 0x4B, 0x31)
_f("4", 0x18, 0x14, 0x12, 0x7F, 0x10)
_f("5", 0x27, 0x45, 0x45, 0x45, 0x39)
_f("6", 0x3C, 0x4A, 0x49, 0x49, 0x30)
_f("7", 0x01, 0x71, 0x09, 0x05, 0x03)
_f("8", 0x36, 0x49, 0x49, 0x49, 0x36)
_f("9", 0x06, 0x49, 0x49, 0x29, 0x1E)
_f(":", 0x00, 0x36, 0x36, 0x00, 0x00)
_f(";", 0x00, 0x56, 0x36, 0x00, 0x00)
_f("<", 0x00, 0x08, 0x14, 0x22, 0x41)
_f("=", 0x14, 0x14, 0x14, 0x14, 0x14)
_f(">", 0x41, 0x22, 0x14, 0x08, 0x00)
_f("?", 0x02, 0x01, 0x51, 0x09, 0x06)
_f("@", 0x32, 0x49, 0x79, 0x41, 0x3E)
_f("A", 0x7E, 0x11, 0x11, 0x11, 0x7E)
_f("B", 0x7F, 0x49, 0x49, 0x49, 0x36)
_f("C", 0x3E, 0x41, 0x41, 0x41, 0x22)
_f("D", 0x7F, 0x41, 0x41, 0x22, 0x1C)
_f("E", 0x7F, 0x49, 0x49, 0x49, 0x41)
_f("F", 0x7F, 0x09, 0x09, 0x01, 0x01)
_f("G", 0x3E, 0x41, 0x41, 0x51, 0x32)
_f("H", 0x7F, 0x08, 0x08, 0x08, 0x7F)
_f("I", 0x00, 0x41, 0x7F, 0x41, 0x00)
_f("J", 0x20, 0x40, 0x41, 0x3F, 0x01)
_f("K", 0x7F, 0x08, 0x14, 0x22, 0x41)
_f("L", 0x7F, 0x40, 0x40, 0x40, 0x40)
_f("M", 0x7F, 0x02, 0x04, 0x02, 0x7F)
_f("N", 0x7F, 0x04, 0x08, 0x10, 0x7F)
_f("O", 0x3E, 0x41, 0x41, 0x41, 0x3E)
_f("P", 0x7F, 0x09, 0x09, 0x09, 0x06)
_f("Q", 0x3E, 0x41, 0x51, 0x21, 0x5E)
_f("R", 0x7F, 0x09, 0x19, 0x29, 0x46)
_f("S", 0x46, 0x49, 0x49, 0x49, 0x31)
_f("T", 0x01, 0x01, 0x7F, 0x01, 0x01)
_f("U", 0x3F, 0x40, 0x40, 0x40, 0x3F)
_f("V", 0x1F, 0x20, 0x40, 0x20, 0x1F)
_f("W", 0x7F, 0x20, 0x18, 0x20, 0x7F)
_f("X", 0x63, 0x14, 0x08, 0x14, 0x63)
_f("Y", 0x03, 0x04, 0x78, 0x04, 0x03)
_f("Z", 0x61, 0x51, 0x49, 0x45, 0x43)
_f("[", 0x00, 0x00, 0x7F, 0x41, 0x41)
_f("\\", 0x02, 0x04, 0x08, 0x10, 0x20)
_f("]", 0x41, 0x41, 0x7F, 0x00, 0x00)
_f("^", 0x04, 0x02, 0x01, 0x02, 0x04)
_f("_", 0x40, 0x40, 0x40, 0x40, 0x40)
_f("`", 0x00, 0x01, 0x02, 0x04, 0x00)
_f("a", 0x20, 0x54, 0x54, 0x54, 0x78)
_f("b", 0x7F, 0x48, 0x44, 0x44, 0x38)
_f("c", 0x38, 0x44, 0x44, 0x44, 0x20)
_f("d", 0x38, 0x44, 0x44, 0x48, 0x7F)
_f("e", 0x38, 0x54, 0x54, 0x54, 0x18)
_f("f", 0x08, 0x7E, 0x09, 0x01, 0x02)
_f("g", 0x08, 0x14, 0x54, 0x54, 0x3C)
_f("h", 0x7F, 0x08, 0x04, 0x04, 0x78)
_f("i", 0x00, 0x44, 0x7D, 0x40, 0x00)
_f("j", 0x20, 0x40, 0x44, 0x3D, 0x00)
_f("k", 0x00, 0x7F, 0x10, 0x28, 0x44)
_f("l", 0x00, 0x41, 0x7F, 0x40, 0x00)
_f("m", 0x7C, 0x04, 0x18, 0x04, 0x78)
_f("n", 0x7C, 0x08, 0x04, 0x04, 0x78)
_f("o", 0x38, 0x44, 0x44, 0x44, 0x38)
_f("p", 0x7C, 0x14, 0x14, 0x14, 0x08)
_f("q", 0x08, 0x14, 0x14, 0x18, 0x7C)
_f("r", 0x7C, 0x08, 0x04, 0x04, 0x08)
_f("s", 0x48, 0x54, 0x54, 0x54, 0x20)
_f("t", 0x04, 0x3F, 0x44, 0x40, 0x20)
_f("u", 0x3C, 0x40, 0x40, 0x20, 0x7C)
_f("v", 0x1C, 0x20, 0x40, 0x20, 0x1C)
_f("w", 0x3C, 0x40, 0x30, 0x40, 0x3C)
_f("x", 0x44, 0x28, 0x10, 0x28, 0x44)
_f("y", 0x0C, 0x50, 0x50, 0x50, 0x3C)
_f("z", 0x44, 0x64, 0x54, 0x4C, 0x44)
_f("{", 0x00, 0x08, 0x36, 0x41, 0x00)
_f("|", 0x00, 0x00, 0x7F, 0x00, 0x00)
_f("}", 0x00, 0x41, 0x36, 0x08, 0x00)
_f("~", 0x08, 0x08, 0x2A, 0x1C, 0x08)

_UNKNOWN = _FONT_BYTES[ord("?")]


def text_width(s: str, scale: int = 1) -> int:
    return len(s) * GLYPH_W * scale


class Raster:
    """A width x height RGBA canvas with clipped drawing primitives."""

    def __init__(self, width: int, height: int,
                 background: tuple = (255, 255, 255, 255)):
        self.width = width
        self.height = height
        self.pix = np.empty((height, width, 4), dtype=np.uint8)
        self.pix[:, :] = background

    # -- primitives ----------------------------------------------------------

    def fill_rect(self, x: int, y: int, w: int, h: int, color: tuple) -> None:
        x0, y0 = max(0, int(x)), max(0, int(y))
        x1, y1 = min(self.width, int(x + w)), min(self.height, int(y + h))
        if x1 > x0 and y1 > y0:
            self.pix[y0:y1, x0:x1] = color

    def put(self, x: int, y: int, color: tuple) -> None:
        if 0 <= x < self.width and 0 <= y < self.height:
            self.pix[y, x] = color

    def line(self, x0: float, y0: float, x1: float, y1: float,
             color: tuple, width: int = 1) -> None:
        """Bresenham polyline segment with optional thickness."""
        ix0, iy0, ix1, iy1 = int(round(x0)), int(round(y0)), int(round(x1)), int(round(y1))
        dx, dy = abs(ix1 - ix0), -abs(iy1 - iy0)
        sx = 1 if ix0 < ix1 else -1
        sy = 1 if iy0 < iy1 else -1
        err = dx + dy
        x, y = ix0, iy0
        while True:
            if width <= 1:
                self.put(x, y, color)
            else:
                r = width // 2
                self.fill_rect(x - r, y - r, width, width, color)
            if x == ix1 and y == iy1:
                break
            e2 = 2 * err
            if e2 >= dy:
                err += dy
                x += sx
            if e2 <= dx:
                err += dx
                y += sy

    def text(self, x: int, y: int, s: str, color: tuple, scale: int = 1) -> None:
        """Draw text with its top-left corner at (x, y)."""
        cx = int(x)
        for ch in s:
            glyph = _FONT_BYTES.get(ord(ch), _UNKNOWN)
            for col, bits in enumerate(glyph):
                for row in range(7):
                    if bits >> row & 1:
                        self.fill_rect(cx + col * scale, int(y) + row * scale,
                                       scale, scale, color)
            cx += GLYPH_W * scale

    def text_centered(self, x: int, y: int, s: str, color: tuple, scale: int = 1) -> None:
        self.text(x - text_width(s, scale) // 2, y, s, color, scale)

    def text_right(self, x: int, y: int, s: str, color: tuple, scale: int = 1) -> None:
        self.text(x - text_width(s, scale), y, s, color, scale)

    def blit_rgba(self, x: int, y: int, img: np.ndarray) -> None:
        """Copy an RGBA block, honoring its alpha as a binary mask."""
        h, w, _ = img.shape
        x0, y0 = max(0, x), max(0, y)
        x1, y1 = min(self.width, x + w), min(self.height, y + h)
        if x1 <= x0 or y1 <= y0:
            return
        sub = img[y0 - y:y1 - y, x0 - x:x1 - x]
        mask = sub[:, :, 3] > 0
        region = self.pix[y0:y1, x0:x1]
        region[mask] = sub[mask]

    def to_png(self) -> bytes:
        return encode_png(self.pix)


def encode_png(rgba: np.ndarray) -> bytes:
    """Minimal deterministic PNG: 8-bit RGBA, filter 0, one IDAT chunk."""
    if rgba.dtype != np.uint8 or rgba.ndim != 3 or rgba.shape[2] != 4:
        raise ValueError("encode_png expects an (H, W, 4) uint8 array")
    h, w, _ = rgba.shape
    rows = np.zeros((h, 1 + w * 4), dtype=np.uint8)
    rows[:, 1:] = rgba.reshape(h, w * 4)
    compressed = zlib.compress(rows.tobytes(), 9)

    def chunk(tag: bytes, data: bytes) -> bytes:
        body = tag + data
        return struct.pack(">I", len(data)) + body + struct.pack(
            ">I", zlib.crc32(body) & 0xFFFFFFFF)

    ihdr = struct.pack(">IIBBBBB", w, h, 8, 6, 0, 0, 0)
    return (b"\x89PNG\r\n\x1a\n"
            + chunk(b"IHDR", ihdr)
            + chunk(b"IDAT", compressed)
            + chunk(b"IEND", b""))
