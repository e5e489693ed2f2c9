"""Dependency-free PNG writing, image grids and a tiny line-plot rasterizer."""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np


def _chunk(kind: bytes, data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + kind + data + struct.pack(">I", zlib.crc32(data, zlib.crc32(kind)))


def encode_png(pixels: np.ndarray) -> bytes:
    """Encode an (H, W) grayscale or (H, W, 3) RGB uint8 array."""
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    if pixels.ndim == 2:
        color, h, w = 0, *pixels.shape
    elif pixels.ndim == 3 and pixels.shape[2] == 3:
        color, h, w = 2, *pixels.shape[:2]
    else:
        raise ValueError(f"expected (H, W) or (H, W, 3) pixels, got {pixels.shape}")
    rows = pixels.reshape(h, -1)
    raw = np.hstack([np.zeros((h, 1), np.uint8), rows]).tobytes()  # filter byte 0 per row
    ihdr = struct.pack(">IIBBBBB", w, h, 8, color, 0, 0, 0)
    return b"\x89PNG\r\n\x1a\n" + _chunk(b"IHDR", ihdr) + _chunk(b"IDAT", zlib.compress(raw, 9)) + _chunk(b"IEND", b"")


def write_png(path, pixels: np.ndarray) -> None:
    Path(path).write_bytes(encode_png(pixels))


def image_grid(images: np.ndarray, rows: int, cols: int, gap=2, border=2, fill=0) -> np.ndarray:
    """Tile (N, C, H, W) uint8 images row-major into one canvas.

    Tiles are separated by ``gap`` pixels and framed by ``border`` pixels of
    value ``fill``. Single-channel input gives an (H, W) canvas, RGB gives (H, W, 3).
    """
    images = np.asarray(images, dtype=np.uint8)
    if rows * cols > len(images):
        raise ValueError(f"{rows}x{cols} grid needs {rows * cols} images, got {len(images)}")
    _, c, h, w = images.shape
    height = rows * h + (rows - 1) * gap + 2 * border
    width = cols * w + (cols - 1) * gap + 2 * border
    canvas = np.full((height, width, c), fill, dtype=np.uint8)
    for k in range(rows * cols):
        r, q = divmod(k, cols)
        y = border + r * (h + gap)
        x = border + q * (w + gap)
        canvas[y:y + h, x:x + w] = images[k].transpose(1, 2, 0)
    return canvas[:, :, 0] if c == 1 else canvas


def export_image_grid(images, rows, cols, path) -> Path:
    path = Path(path)
    write_png(path, image_grid(images, rows, cols))
    return path


# ---------------------------------------------------------------- plotting

PALETTE = [(31, 119, 180), (214, 39, 40), (44, 160, 44), (148, 103, 189), (255, 127, 14)]


def _line(canvas, x0, y0, x1, y1, color, width=2):
    steps = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
    xs = np.rint(np.linspace(x0, x1, steps)).astype(int)
    ys = np.rint(np.linspace(y0, y1, steps)).astype(int)
    h, w = canvas.shape[:2]
    for dx in range(-(width // 2), width - width // 2):
        for dy in range(-(width // 2), width - width // 2):
            ok = (xs + dx >= 0) & (xs + dx < w) & (ys + dy >= 0) & (ys + dy < h)
            canvas[ys[ok] + dy, xs[ok] + dx] = color


def line_plot(xs, curves: dict, bands: dict | None = None, size=(480, 320), ylim=(0.0, 1.0), log_x=False) -> np.ndarray:
    """Rasterize one or more curves with optional +/- bands onto an RGB canvas.

    ``curves`` maps a name to y-values aligned with ``xs``; ``bands`` maps the
    same names to half-widths. Axes are drawn with a tick at every x and at
    each 0.1 step of y. There is no text; the caller records the legend.
    """
    w, h = size
    left, right, top, bottom = 40, 15, 15, 30
    canvas = np.full((h, w, 3), 255, dtype=np.uint8)
    xs = np.asarray(xs, dtype=float)
    tx = np.log(xs) if log_x else xs
    lo, hi = tx.min(), tx.max()
    span = hi - lo if hi > lo else 1.0

    def px(v):
        return left + (v - lo) / span * (w - left - right) if hi > lo else (left + w - right) / 2

    def py(v):
        v = np.clip(v, ylim[0], ylim[1])
        return h - bottom - (v - ylim[0]) / (ylim[1] - ylim[0]) * (h - top - bottom)

    for i, (name, ys) in enumerate(curves.items()):
        color = np.array(PALETTE[i % len(PALETTE)])
        ys = np.asarray(ys, dtype=float)
        if bands and name in bands:
            half = np.asarray(bands[name], dtype=float)
            shade = (0.75 * 255 + 0.25 * color).astype(np.uint8)
            for j in range(len(xs) - 1):
                c0, c1 = int(round(px(tx[j]))), int(round(px(tx[j + 1])))
                for col in range(c0, c1 + 1):
                    f = (col - c0) / max(c1 - c0, 1)
                    mid = ys[j] + f * (ys[j + 1] - ys[j])
                    hw = half[j] + f * (half[j + 1] - half[j])
                    r0, r1 = int(round(py(mid + hw))), int(round(py(mid - hw)))
                    canvas[r0:r1 + 1, col] = np.minimum(canvas[r0:r1 + 1, col], shade)
    # axes over the bands, curves over everything
    _line(canvas, left, top, left, h - bottom, (0, 0, 0), 1)
    _line(canvas, left, h - bottom, w - right, h - bottom, (0, 0, 0), 1)
    for v in tx:
        x = px(v)
        _line(canvas, x, h - bottom, x, h - bottom + 5, (0, 0, 0), 1)
    for k in range(11):
        y = py(ylim[0] + k * (ylim[1] - ylim[0]) / 10)
        _line(canvas, left - 5, y, left, y, (0, 0, 0), 1)
    for i, (name, ys) in enumerate(curves.items()):
        color = PALETTE[i % len(PALETTE)]
        ys = np.asarray(ys, dtype=float)
        for j in range(len(xs) - 1):
            _line(canvas, px(tx[j]), py(ys[j]), px(tx[j + 1]), py(ys[j + 1]), color)
        for j in range(len(xs)):
            _line(canvas, px(tx[j]) - 2, py(ys[j]), px(tx[j]) + 2, py(ys[j]), color, 3)
    return canvas
