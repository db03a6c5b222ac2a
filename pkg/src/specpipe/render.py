"""Spectrogram normalisation, colour mapping and lossless PNG export.

Images put low frequencies at the bottom row.  Quantisation to bytes uses
round-half-up: ``floor(v * 255 + 0.5)``.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._colormap_data import VIRIDIS_HEX
from .errors import ConfigError, IoFailure
from .stft_mel import Mode, SpectrogramTensor

VIRIDIS = np.frombuffer(bytes.fromhex("".join(VIRIDIS_HEX)), dtype=np.uint8).reshape(256, 3)

_PNG_SIG = b"\x89PNG\r\n\x1a\n"


@dataclass(frozen=True, eq=False)
class SpectrogramImage:
    pixels: np.ndarray  # (height, width, channels) uint8
    colormap_name: str = ""
    mode: str = ""

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


def _data(t) -> np.ndarray:
    return np.asarray(t.data if isinstance(t, SpectrogramTensor) else t, dtype=np.float64)


def normalize(t, mode: str = "minmax", db_range: tuple[float, float] | None = None) -> np.ndarray:
    """Map a tensor into [0, 1].

    ``mode="minmax"`` stretches min..max of the whole tensor (a constant
    tensor becomes zeros); ``mode="fixed"`` clamps to ``db_range`` and maps
    it affinely.
    """
    x = _data(t)
    if mode == "minmax":
        lo, hi = float(x.min()), float(x.max())
        if hi <= lo:
            return np.zeros_like(x)
        return (x - lo) / (hi - lo)
    if mode == "fixed":
        if db_range is None:
            raise ConfigError("fixed normalisation needs db_range=(floor, ceil)")
        lo, hi = map(float, db_range)
        if hi <= lo:
            raise ConfigError("db_range must satisfy floor < ceil")
        return (np.clip(x, lo, hi) - lo) / (hi - lo)
    raise ConfigError(f"unknown normalisation mode {mode!r}")


def clamp_top_db(t, top_db: float = 80.0) -> np.ndarray:
    """Raise every value to at least ``max - top_db``."""
    x = _data(t)
    return np.maximum(x, x.max() - top_db)


def quantize(plane) -> np.ndarray:
    v = np.clip(np.asarray(plane, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def apply_colormap(plane, colormap: np.ndarray = VIRIDIS, name: str = "viridis", mode: str = "") -> SpectrogramImage:
    """Colour-map a [0, 1] frequency x time plane into an RGB image."""
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim == 3 and plane.shape[0] == 1:
        plane = plane[0]
    if plane.ndim != 2:
        raise ConfigError("apply_colormap expects a single 2-D plane")
    table = np.asarray(colormap, dtype=np.uint8)
    if table.shape != (256, 3):
        raise ConfigError("colormap must be a 256 x 3 table")
    rgb = table[quantize(plane)][::-1]
    return SpectrogramImage(np.ascontiguousarray(rgb), name, mode)


def colormap_float(plane, colormap: np.ndarray = VIRIDIS) -> np.ndarray:
    """Colour-mapped plane as a (3, rows, frames) float tensor in [0, 1].

    Uses the same quantised table lookup as the PNG path, without the
    vertical flip, so the classifier sees exactly the exported colours.
    """
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim == 3:
        plane = plane[0]
    rgb = np.asarray(colormap, dtype=np.float64)[quantize(plane)] / 255.0
    return np.moveaxis(rgb, -1, 0)


def to_image(t: SpectrogramTensor, normalized: np.ndarray | None = None, colormap: np.ndarray | None = VIRIDIS) -> SpectrogramImage:
    """Render a tensor: 3-channel tensors map channel k to colour k, single planes use the colormap."""
    x = normalize(t) if normalized is None else np.asarray(normalized)
    if x.shape[0] == 3:
        pixels = np.moveaxis(quantize(x), 0, -1)[::-1]
        return SpectrogramImage(np.ascontiguousarray(pixels), "", t.mode.value)
    if colormap is None:
        return SpectrogramImage(np.ascontiguousarray(quantize(x[0])[::-1, :, None]), "gray", t.mode.value)
    return apply_colormap(x[0], colormap, "viridis", t.mode.value)


def image_filename(clip_id: str, start_ms: int, mode: Mode | str) -> str:
    return f"{clip_id}_{int(start_ms)}_{Mode(mode).value}.png"


def _chunk(kind: bytes, body: bytes) -> bytes:
    return struct.pack(">I", len(body)) + kind + body + struct.pack(">I", zlib.crc32(kind + body) & 0xFFFFFFFF)


def encode_png(pixels: np.ndarray, text: dict | None = None) -> bytes:
    """8-bit gray/RGB PNG, filter type 0, optional tEXt key/value chunks."""
    px = np.asarray(pixels)
    if px.ndim == 2:
        px = px[:, :, None]
    if px.dtype != np.uint8 or px.shape[2] not in (1, 3):
        raise ConfigError("PNG export needs uint8 pixels with 1 or 3 channels")
    h, w, c = px.shape
    color_type = 0 if c == 1 else 2
    raw = b"".join(b"\x00" + px[r].tobytes() for r in range(h))
    ihdr = struct.pack(">IIBBBBB", w, h, 8, color_type, 0, 0, 0)
    texts = b"".join(
        _chunk(b"tEXt", k.encode("latin-1") + b"\0" + str(v).encode("latin-1")) for k, v in sorted((text or {}).items())
    )
    return _PNG_SIG + _chunk(b"IHDR", ihdr) + texts + _chunk(b"IDAT", zlib.compress(raw, 9)) + _chunk(b"IEND", b"")


def export_png(img: SpectrogramImage | np.ndarray, path, text: dict | None = None) -> None:
    pixels = img.pixels if isinstance(img, SpectrogramImage) else img
    data = encode_png(pixels, text)
    try:
        Path(path).write_bytes(data)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _paeth(a: int, b: int, c: int) -> int:
    p = a + b - c
    pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
    if pa <= pb and pa <= pc:
        return a
    return b if pb <= pc else c


def decode_png(data: bytes) -> np.ndarray:
    """Decode an 8-bit grayscale or RGB non-interlaced PNG to (h, w, c) uint8."""
    if not data.startswith(_PNG_SIG):
        raise ConfigError("not a PNG file")
    pos, idat, hdr = len(_PNG_SIG), b"", None
    while pos < len(data):
        (n,) = struct.unpack(">I", data[pos : pos + 4])
        kind = data[pos + 4 : pos + 8]
        body = data[pos + 8 : pos + 8 + n]
        if kind == b"IHDR":
            hdr = struct.unpack(">IIBBBBB", body)
        elif kind == b"IDAT":
            idat += body
        elif kind == b"IEND":
            break
        pos += 12 + n
    if hdr is None:
        raise ConfigError("PNG without IHDR")
    w, h, depth, color_type, _, _, interlace = hdr
    if depth != 8 or color_type not in (0, 2) or interlace:
        raise ConfigError("only 8-bit non-interlaced gray/RGB PNGs are supported")
    c = 1 if color_type == 0 else 3
    stride = w * c
    raw = zlib.decompress(idat)
    out = np.zeros((h, stride), dtype=np.uint8)
    prev = bytearray(stride)
    for r in range(h):
        ftype = raw[r * (stride + 1)]
        line = bytearray(raw[r * (stride + 1) + 1 : (r + 1) * (stride + 1)])
        for i in range(stride):
            a = line[i - c] if i >= c else 0
            b = prev[i]
            cc = prev[i - c] if i >= c else 0
            if ftype == 1:
                line[i] = (line[i] + a) & 0xFF
            elif ftype == 2:
                line[i] = (line[i] + b) & 0xFF
            elif ftype == 3:
                line[i] = (line[i] + (a + b) // 2) & 0xFF
            elif ftype == 4:
                line[i] = (line[i] + _paeth(a, b, cc)) & 0xFF
        out[r] = np.frombuffer(bytes(line), dtype=np.uint8)
        prev = line
    return out.reshape(h, w, c)


def read_png(path) -> np.ndarray:
    return decode_png(Path(path).read_bytes())


def _draw_line(img: np.ndarray, x0: float, y0: float, x1: float, y1: float, color) -> None:
    n = int(max(abs(x1 - x0), abs(y1 - y0))) + 1
    xs = np.round(np.linspace(x0, x1, n + 1)).astype(int)
    ys = np.round(np.linspace(y0, y1, n + 1)).astype(int)
    ok = (xs >= 0) & (xs < img.shape[1]) & (ys >= 0) & (ys < img.shape[0])
    img[ys[ok], xs[ok]] = color


def plot_roc(fpr, tpr, size: int = 256) -> np.ndarray:
    """Raster ROC plot: white background, grey chance diagonal, blue curve."""
    img = np.full((size, size, 3), 255, dtype=np.uint8)
    m = size - 1
    _draw_line(img, 0, m, m, 0, (180, 180, 180))
    img[m, :] = img[:, 0] = (0, 0, 0)
    pts = [(f * m, m - t * m) for f, t in zip(fpr, tpr)]
    for (xa, ya), (xb, yb) in zip(pts, pts[1:]):
        _draw_line(img, xa, ya, xb, yb, (31, 119, 180))
    return img


def plot_confusion(tp: int, fn: int, fp: int, tn: int, cell: int = 64) -> np.ndarray:
    """2 x 2 grid, rows = truth (Fail, Pass), columns = prediction; darker = more."""
    counts = np.array([[tp, fn], [fp, tn]], dtype=float)
    rows = counts.sum(axis=1, keepdims=True)
    frac = np.divide(counts, rows, out=np.zeros_like(counts), where=rows > 0)
    shade = quantize(1.0 - frac)
    img = np.kron(shade, np.ones((cell, cell), dtype=np.uint8))
    img[::cell, :] = 0
    img[:, ::cell] = 0
    return np.repeat(img[:, :, None], 3, axis=2)
