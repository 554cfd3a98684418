"""Pixel-level primitives: image container conventions, color space
conversion, Gaussian windows, convolution, resampling, and raster I/O.

An image is a float64 ndarray of shape (H, W, C) with C in {1, 3} and
samples in [0, 1]. All arithmetic is double precision; files quantize
to 8 bits. Every function here is pure.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from . import _kernels
from .errors import (
    MalformedHeaderError,
    PreconditionError,
    ShapeMismatchError,
    TruncatedPayloadError,
    UnsupportedBitDepthError,
    UnsupportedFormatError,
)

# fixed RGB -> luma convention (no colorimetric claim intended)
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


def validate_image(img: np.ndarray) -> np.ndarray:
    """Coerce to the canonical (H, W, C) float64 layout and check invariants."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3):
        raise ShapeMismatchError(f"expected (H, W, 1|3) image, got shape {np.shape(img)}")
    if not np.all(np.isfinite(a)):
        raise PreconditionError("image contains non-finite samples")
    if a.min() < 0.0 or a.max() > 1.0:
        raise PreconditionError("image samples outside [0, 1]")
    return np.ascontiguousarray(a)


def clamp01(a: np.ndarray) -> np.ndarray:
    return np.clip(a, 0.0, 1.0)


def luminance(img: np.ndarray) -> np.ndarray:
    """(H, W) luma plane; grayscale images pass through."""
    if img.ndim == 2:
        return img
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img @ LUMA_WEIGHTS


# ---------------------------------------------------------------------------
# HSV (hexcone). Hue is a fraction of a full turn in [0, 1).
# ---------------------------------------------------------------------------

def rgb_to_hsv(rgb):
    """Map an RGB triple (or (..., 3) array) in [0,1] to (h, s, v).

    Achromatic pixels get h = 0 and s = 0 by convention.
    """
    a = np.asarray(rgb, dtype=np.float64)
    r, g, b = a[..., 0], a[..., 1], a[..., 2]
    v = np.maximum(np.maximum(r, g), b)
    mn = np.minimum(np.minimum(r, g), b)
    c = v - mn
    safe_c = np.where(c > 0, c, 1.0)
    h6 = np.where(
        v == r,
        ((g - b) / safe_c) % 6.0,
        np.where(v == g, (b - r) / safe_c + 2.0, (r - g) / safe_c + 4.0),
    )
    h = np.where(c > 0, h6 / 6.0, 0.0) % 1.0
    s = np.where(v > 0, c / np.where(v > 0, v, 1.0), 0.0)
    out = np.stack([h, s, v], axis=-1)
    return out if a.ndim > 1 else tuple(out)


def hsv_to_rgb(hsv):
    """Inverse of :func:`rgb_to_hsv` on triples or (..., 3) arrays."""
    a = np.asarray(hsv, dtype=np.float64)
    h, s, v = a[..., 0] % 1.0, a[..., 1], a[..., 2]
    h6 = h * 6.0
    i = np.floor(h6).astype(np.int64) % 6
    f = h6 - np.floor(h6)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    out = np.stack([r, g, b], axis=-1)
    return out if a.ndim > 1 else tuple(out)


def image_to_hsv(img: np.ndarray) -> np.ndarray:
    """Per-pixel HSV planes for a 3-channel image."""
    if img.shape[2] != 3:
        raise ShapeMismatchError("HSV conversion needs a 3-channel image")
    return rgb_to_hsv(img)


# ---------------------------------------------------------------------------
# windows / convolution / resampling
# ---------------------------------------------------------------------------

def gaussian_window(size: int, sigma: float) -> np.ndarray:
    """Odd-sized separable 2-D Gaussian, normalized to unit sum."""
    if size < 1 or size % 2 == 0:
        raise PreconditionError(f"window size must be odd and positive, got {size}")
    if sigma <= 0:
        raise PreconditionError(f"sigma must be positive, got {sigma}")
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g1 = np.exp(-(r**2) / (2.0 * sigma**2))
    k = np.outer(g1, g1)
    return k / k.sum()


def convolve_valid(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-channel valid-region cross-correlation (no padding)."""
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.ndim != 2:
        raise ShapeMismatchError("kernel must be 2-D")
    single_plane = img.ndim == 2
    a = img[:, :, None] if single_plane else img
    if kernel.shape[0] > a.shape[0] or kernel.shape[1] > a.shape[1]:
        raise ShapeMismatchError(
            f"kernel {kernel.shape} larger than image {a.shape[:2]}"
        )
    planes = [_kernels.corr2_valid(a[:, :, c], kernel) for c in range(a.shape[2])]
    out = np.stack(planes, axis=-1)
    return out[:, :, 0] if single_plane else out


def downsample2(img: np.ndarray) -> np.ndarray:
    """2x2 mean pooling with stride 2 (floor on odd dimensions)."""
    single_plane = img.ndim == 2
    a = img[:, :, None] if single_plane else img
    h, w = a.shape[0] // 2, a.shape[1] // 2
    if h < 1 or w < 1:
        raise PreconditionError("image must be at least 2x2 to downsample")
    v = a[: h * 2, : w * 2]
    # row-major summation order matches a flat 4-sample mean bit-for-bit
    out = (v[0::2, 0::2] + v[0::2, 1::2] + v[1::2, 0::2] + v[1::2, 1::2]) / 4.0
    return out[:, :, 0] if single_plane else out


# ---------------------------------------------------------------------------
# raster I/O: binary PPM/PGM (8-bit) plus minimal 8-bit PNG
# ---------------------------------------------------------------------------

def _quantize(img: np.ndarray) -> np.ndarray:
    return (np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def _read_pnm_token(buf: bytes, pos: int) -> tuple[bytes, int]:
    n = len(buf)
    while pos < n:
        if buf[pos : pos + 1].isspace():
            pos += 1
        elif buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos] != 0x0A:
                pos += 1
        else:
            break
    start = pos
    while pos < n and not buf[pos : pos + 1].isspace():
        pos += 1
    if start == pos:
        raise MalformedHeaderError("unexpected end of PNM header")
    return buf[start:pos], pos


def _load_pnm(raw: bytes) -> np.ndarray:
    magic = raw[:2]
    if magic not in (b"P6", b"P5"):
        raise MalformedHeaderError(f"not a binary PPM/PGM file (magic {magic!r})")
    channels = 3 if magic == b"P6" else 1
    pos = 2
    try:
        wtok, pos = _read_pnm_token(raw, pos)
        htok, pos = _read_pnm_token(raw, pos)
        mtok, pos = _read_pnm_token(raw, pos)
        width, height, maxval = int(wtok), int(htok), int(mtok)
    except ValueError as exc:
        raise MalformedHeaderError(f"bad PNM header field: {exc}") from exc
    if width <= 0 or height <= 0:
        raise MalformedHeaderError(f"bad PNM dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedBitDepthError(f"only maxval 255 supported, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    need = width * height * channels
    payload = raw[pos : pos + need]
    if len(payload) < need:
        raise TruncatedPayloadError(
            f"expected {need} payload bytes, found {len(payload)}"
        )
    data = np.frombuffer(payload, dtype=np.uint8).reshape(height, width, channels)
    return data.astype(np.float64) / 255.0


def _save_pnm(img: np.ndarray, path: str) -> None:
    q = _quantize(img)
    magic = b"P6" if img.shape[2] == 3 else b"P5"
    header = magic + b"\n%d %d\n255\n" % (img.shape[1], img.shape[0])
    with open(path, "wb") as f:
        f.write(header)
        f.write(q.tobytes())


_PNG_SIG = bytes([137, 80, 78, 71, 13, 10, 26, 10])


def _png_chunk(tag: bytes, data: bytes) -> bytes:
    crc = zlib.crc32(data, zlib.crc32(tag))
    return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", crc)


def _save_png(img: np.ndarray, path: str) -> None:
    q = _quantize(img)
    h, w, c = q.shape
    color_type = 2 if c == 3 else 0
    ihdr = struct.pack(">IIBBBBB", w, h, 8, color_type, 0, 0, 0)
    rows = bytearray()
    for y in range(h):
        rows.append(0)  # filter None
        rows.extend(q[y].tobytes())
    with open(path, "wb") as f:
        f.write(_PNG_SIG)
        f.write(_png_chunk(b"IHDR", ihdr))
        f.write(_png_chunk(b"IDAT", zlib.compress(bytes(rows), 6)))
        f.write(_png_chunk(b"IEND", b""))


def _png_unfilter(raw: bytes, h: int, w: int, c: int) -> np.ndarray:
    stride = w * c
    if len(raw) < h * (stride + 1):
        raise TruncatedPayloadError("PNG pixel data shorter than declared size")
    out = np.zeros((h, stride), dtype=np.uint8)
    pos = 0
    for y in range(h):
        ftype = raw[pos]
        pos += 1
        line = np.frombuffer(raw[pos : pos + stride], dtype=np.uint8).astype(np.int32)
        pos += stride
        prev = out[y - 1].astype(np.int32) if y > 0 else np.zeros(stride, np.int32)
        if ftype == 0:
            cur = line
        elif ftype == 2:
            cur = (line + prev) & 0xFF
        elif ftype in (1, 3, 4):
            cur = np.zeros(stride, dtype=np.int32)
            for i in range(stride):
                a = cur[i - c] if i >= c else 0
                b = prev[i]
                if ftype == 1:
                    pred = a
                elif ftype == 3:
                    pred = (a + b) // 2
                else:  # Paeth
                    cc = prev[i - c] if i >= c else 0
                    p = a + b - cc
                    pa, pb, pc = abs(p - a), abs(p - b), abs(p - cc)
                    pred = a if (pa <= pb and pa <= pc) else (b if pb <= pc else cc)
                cur[i] = (line[i] + pred) & 0xFF
        else:
            raise UnsupportedFormatError(f"unknown PNG filter type {ftype}")
        out[y] = cur.astype(np.uint8)
    return out.reshape(h, w, c)


def _load_png(raw: bytes) -> np.ndarray:
    if raw[:8] != _PNG_SIG:
        raise MalformedHeaderError("bad PNG signature")
    pos = 8
    ihdr = None
    idat = bytearray()
    while pos + 8 <= len(raw):
        (length,) = struct.unpack(">I", raw[pos : pos + 4])
        tag = raw[pos + 4 : pos + 8]
        data = raw[pos + 8 : pos + 8 + length]
        if len(data) < length:
            raise TruncatedPayloadError("PNG chunk shorter than declared length")
        if tag == b"IHDR":
            ihdr = struct.unpack(">IIBBBBB", data)
        elif tag == b"IDAT":
            idat.extend(data)
        elif tag == b"IEND":
            break
        pos += 12 + length
    if ihdr is None:
        raise MalformedHeaderError("PNG missing IHDR chunk")
    w, h, depth, color_type, _, _, interlace = ihdr
    if depth != 8:
        raise UnsupportedBitDepthError(f"only 8-bit PNG supported, got {depth}-bit")
    if color_type not in (0, 2):
        raise UnsupportedFormatError(f"unsupported PNG color type {color_type}")
    if interlace != 0:
        raise UnsupportedFormatError("interlaced PNG not supported")
    try:
        pixels = zlib.decompress(bytes(idat))
    except zlib.error as exc:
        raise TruncatedPayloadError(f"PNG deflate stream corrupt: {exc}") from exc
    c = 3 if color_type == 2 else 1
    data = _png_unfilter(pixels, h, w, c)
    return data.astype(np.float64) / 255.0


def load_image(path: str) -> np.ndarray:
    """Load a PPM/PGM or PNG file into a [0,1] float image."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise MalformedHeaderError(f"cannot read {path}: {exc}") from exc
    if raw[:8] == _PNG_SIG:
        return _load_png(raw)
    if raw[:2] in (b"P6", b"P5"):
        return _load_pnm(raw)
    raise MalformedHeaderError(f"{path}: unrecognized raster format")


def save_image(img: np.ndarray, path: str) -> None:
    """Write an image as PPM/PGM (default) or PNG by extension."""
    img = validate_image(img)
    if str(path).lower().endswith(".png"):
        _save_png(img, path)
    else:
        _save_pnm(img, path)
