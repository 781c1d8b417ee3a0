"""Image representation, file I/O, colour conversion and shared filters.

Images are plain numpy arrays: an RGB raster is ``(H, W, 3) uint8``, a
grayscale raster ``(H, W) uint8`` and a :data:`GrayField` is a ``(H, W)``
float64 intensity map on the 0-255 scale.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import CorruptData, ImageIOError, NotFound, OutOfBounds, UnsupportedFormat

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


@dataclass(frozen=True)
class Rect:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.w < 0 or self.h < 0:
            raise ValueError(f"negative rect size {self}")

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    @property
    def area(self) -> int:
        return self.w * self.h

    def inside(self, width: int, height: int) -> bool:
        return self.x >= 0 and self.y >= 0 and self.x2 <= width and self.y2 <= height

    def intersection_area(self, other: "Rect") -> int:
        w = min(self.x2, other.x2) - max(self.x, other.x)
        h = min(self.y2, other.y2) - max(self.y, other.y)
        return max(w, 0) * max(h, 0)

    def inflate(self, margin: int) -> "Rect":
        return Rect(self.x - margin, self.y - margin, self.w + 2 * margin, self.h + 2 * margin)

    def clip(self, width: int, height: int) -> "Rect":
        x0, y0 = max(self.x, 0), max(self.y, 0)
        x1, y1 = min(self.x2, width), min(self.y2, height)
        return Rect(x0, y0, max(x1 - x0, 0), max(y1 - y0, 0))

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y, self.y2), slice(self.x, self.x2)

    @classmethod
    def parse(cls, text: str) -> "Rect":
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 4:
            raise ValueError(f"expected x,y,w,h, got {text!r}")
        return cls(*(int(p) for p in parts))

    def __str__(self) -> str:
        return f"{self.x},{self.y},{self.w},{self.h}"


# --------------------------------------------------------------------- I/O


def _read_netpbm(data: bytes, path: str) -> np.ndarray:
    magic = data[:2]
    channels = {b"P6": 3, b"P5": 1}[magic]
    fields = []
    pos = 2
    n = len(data)
    while len(fields) < 3:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise CorruptData(f"{path}: truncated header")
        try:
            fields.append(int(data[start:pos]))
        except ValueError:
            raise CorruptData(f"{path}: bad header token {data[start:pos]!r}") from None
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise CorruptData(f"{path}: bad dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedFormat(f"{path}: only maxval 255 is supported, got {maxval}")
    expected = width * height * channels
    payload = data[pos:pos + expected]
    if len(payload) != expected:
        raise CorruptData(f"{path}: expected {expected} payload bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8)
    if channels == 3:
        return arr.reshape(height, width, 3).copy()
    return arr.reshape(height, width).copy()


def load_image(path, promote: bool = True) -> np.ndarray:
    """Decode a PNG or binary PPM/PGM file.

    With ``promote`` (the default) grayscale sources are replicated to three
    channels so callers always get ``(H, W, 3)``.
    """
    path = os.fspath(path)
    if not os.path.exists(path):
        raise NotFound(f"no such file: {path}")
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] in (b"P6", b"P5"):
        img = _read_netpbm(data, path)
    elif data[:8] == _PNG_MAGIC:
        from PIL import Image

        try:
            with Image.open(path) as im:
                im.load()
                if im.mode in ("L", "I;16", "I", "1", "P", "LA"):
                    im = im.convert("L")
                else:
                    im = im.convert("RGB")
                img = np.asarray(im, dtype=np.uint8).copy()
        except (OSError, SyntaxError) as exc:
            raise CorruptData(f"{path}: {exc}") from exc
    else:
        raise UnsupportedFormat(f"{path}: not a PNG or binary PPM/PGM file")
    if promote and img.ndim == 2:
        img = np.repeat(img[:, :, None], 3, axis=2)
    return img


def save_image(img: np.ndarray, path) -> None:
    """Write ``img`` as PNG or PPM/PGM, chosen by the file extension."""
    path = os.fspath(path)
    img = np.asarray(img)
    if img.dtype != np.uint8:
        raise ValueError(f"expected uint8 samples, got {img.dtype}")
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    if not (img.ndim == 2 or (img.ndim == 3 and img.shape[2] == 3)):
        raise ValueError(f"unsupported image shape {img.shape}")
    ext = os.path.splitext(path)[1].lower()
    try:
        if ext in (".ppm", ".pgm", ".pnm"):
            magic = b"P5" if img.ndim == 2 else b"P6"
            header = b"%s %d %d 255\n" % (magic, img.shape[1], img.shape[0])
            with open(path, "wb") as fh:
                fh.write(header)
                fh.write(np.ascontiguousarray(img).tobytes())
        else:
            from PIL import Image

            Image.fromarray(img).save(path, format="PNG")
    except OSError as exc:
        raise ImageIOError(f"cannot write {path}: {exc}") from exc


# ------------------------------------------------------------------ colour


def to_gray(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img.astype(np.float64)
    r, g, b = LUMA_WEIGHTS
    f = img.astype(np.float64)
    return r * f[..., 0] + g * f[..., 1] + b * f[..., 2]


def rgb_to_hsv(r, g, b) -> tuple[float, float, float]:
    """Hexcone HSV of one 8-bit RGB sample; hue in degrees, 0 when gray."""
    h, s, v = hsv_planes(np.array([[[r, g, b]]], dtype=np.uint8))
    return float(h[0, 0]), float(s[0, 0]), float(v[0, 0])


def hsv_planes(img: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised hexcone HSV for an ``(..., 3)`` uint8 array."""
    f = img.astype(np.float64) / 255.0
    r, g, b = f[..., 0], f[..., 1], f[..., 2]
    mx = f.max(axis=-1)
    mn = f.min(axis=-1)
    c = mx - mn
    safe = np.where(c > 0, c, 1.0)
    h = np.zeros_like(mx)
    rmax = (c > 0) & (mx == r)
    gmax = (c > 0) & (mx == g) & ~rmax
    bmax = (c > 0) & ~rmax & ~gmax
    h = np.where(rmax, np.mod((g - b) / safe, 6.0), h)
    h = np.where(gmax, (b - r) / safe + 2.0, h)
    h = np.where(bmax, (r - g) / safe + 4.0, h)
    h = h * 60.0
    s = np.where(mx > 0, c / np.where(mx > 0, mx, 1.0), 0.0)
    return h, s, mx


# ----------------------------------------------------------------- blocks


def crop_block(img: np.ndarray, r: Rect) -> np.ndarray:
    height, width = img.shape[:2]
    if r.w < 1 or r.h < 1 or not r.inside(width, height):
        raise OutOfBounds(f"{r} outside {width}x{height} image")
    return img[r.slices()].copy()


# ---------------------------------------------------------------- filters


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(f: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian low-pass with edge-replicate padding."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    k = gaussian_kernel(sigma)
    out = ndimage.convolve1d(np.asarray(f, dtype=np.float64), k, axis=0, mode="nearest")
    return ndimage.convolve1d(out, k, axis=1, mode="nearest")


def sobel(f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sobel derivatives (x, y) with edge-replicate padding."""
    f = np.asarray(f, dtype=np.float64)
    p = np.pad(f, 1, mode="edge")
    gx = (p[:-2, 2:] + 2 * p[1:-1, 2:] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[1:-1, :-2] + p[2:, :-2])
    gy = (p[2:, :-2] + 2 * p[2:, 1:-1] + p[2:, 2:]) - (p[:-2, :-2] + 2 * p[:-2, 1:-1] + p[:-2, 2:])
    return gx, gy
