"""Image ingestion: binary PPM decoding, bilinear resize, mean subtraction."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, NamedTuple, Sequence, Tuple

import numpy as np

from .errors import FormatError, ShapeError

DEFAULT_MEAN_RGB = (123.68, 116.779, 103.939)
CHANNEL_ORDERS = ("RGB", "BGR")
TARGET = 224


@dataclass(frozen=True)
class RgbImage:
    pixels: np.ndarray  # (height, width, 3) uint8

    def __post_init__(self):
        p = self.pixels
        if p.dtype != np.uint8 or p.ndim != 3 or p.shape[2] != 3:
            raise ShapeError(f"RgbImage needs an (h, w, 3) uint8 array, got {p.dtype} {p.shape}")
        if p.shape[0] < 1 or p.shape[1] < 1:
            raise ShapeError("RgbImage dimensions must be positive")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def _ppm_tokens(buf: bytes, count: int) -> Tuple[List[bytes], int]:
    tokens = []
    pos = 0
    n = len(buf)
    while len(tokens) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("PPM header truncated")
        tokens.append(buf[start:pos])
    return tokens, pos


def decode_ppm(buf: bytes) -> RgbImage:
    if buf[:2] != b"P6":
        raise FormatError(f"only binary PPM (P6) is supported, got magic {buf[:2]!r}")
    (magic, w, h, maxval), pos = _ppm_tokens(buf, 4)
    try:
        width, height, maxv = int(w), int(h), int(maxval)
    except ValueError as e:
        raise FormatError(f"bad PPM header: {e}") from e
    if maxv != 255:
        raise FormatError(f"PPM maxval must be 255, got {maxv}")
    if width < 1 or height < 1:
        raise FormatError(f"PPM dimensions must be positive, got {width}x{height}")
    if pos >= len(buf) or not buf[pos:pos + 1].isspace():
        raise FormatError("PPM header not terminated by whitespace")
    pos += 1
    need = width * height * 3
    raster = buf[pos:pos + need]
    if len(raster) < need:
        raise FormatError(f"PPM raster truncated: expected {need} bytes, found {len(raster)}")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3).copy()
    return RgbImage(pixels)


def encode_ppm(img: RgbImage) -> bytes:
    return f"P6\n{img.width} {img.height}\n255\n".encode("ascii") + img.pixels.tobytes()


def read_ppm(path) -> RgbImage:
    return decode_ppm(Path(path).read_bytes())


def write_ppm(img: RgbImage, path) -> None:
    Path(path).write_bytes(encode_ppm(img))


def _axis_weights(src: int, dst: int):
    # half-pixel centres: source coordinate of destination cell i
    x = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    x = np.clip(x, 0.0, src - 1)
    lo = np.floor(x).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    frac = x - lo
    return lo, hi, frac


def resize_bilinear(img: RgbImage, width: int = TARGET, height: int = TARGET) -> RgbImage:
    """Bilinear resize without aspect preservation."""
    if img.width == width and img.height == height:
        return RgbImage(img.pixels.copy())
    src = img.pixels.astype(np.float64)
    y0, y1, fy = _axis_weights(img.height, height)
    x0, x1, fx = _axis_weights(img.width, width)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    return RgbImage(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))


def parse_means(text: str) -> Tuple[float, float, float]:
    parts = [float(p) for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"mean_rgb needs three comma-separated values, got {text!r}")
    return tuple(parts)  # type: ignore[return-value]


def to_input_tensor(img: RgbImage, means: Sequence[float] = DEFAULT_MEAN_RGB,
                    channel_order: str = "RGB") -> np.ndarray:
    """(1, 3, 224, 224) float32 tensor: pixel minus per-channel mean.

    ``means`` are always given in RGB order; ``channel_order`` decides the
    plane order of the output.
    """
    if img.width != TARGET or img.height != TARGET:
        raise ShapeError(f"expected a {TARGET}x{TARGET} image, got {img.width}x{img.height}")
    order = channel_order.upper()
    if order not in CHANNEL_ORDERS:
        raise ValueError(f"channel_order must be RGB or BGR, got {channel_order!r}")
    m = np.asarray(means, dtype=np.float32).reshape(3)
    chw = img.pixels.transpose(2, 0, 1).astype(np.float32) - m[:, None, None]
    if order == "BGR":
        chw = chw[::-1]
    return np.ascontiguousarray(chw[None])


class ManifestEntry(NamedTuple):
    path: str
    label: int
    id: str


def parse_manifest(text: str, base: Path | None = None) -> List[ManifestEntry]:
    """Parse ``<path>\\t<cg|pg>\\t<id>`` lines; blank lines are ignored."""
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.rstrip("\r\n").split("\t")
        if len(parts) != 3:
            raise FormatError(f"manifest line {lineno}: expected 3 tab-separated fields, got {len(parts)}")
        path, label, ident = parts
        label = label.strip().lower()
        if label not in ("cg", "pg"):
            raise FormatError(f"manifest line {lineno}: label must be cg or pg, got {label!r}")
        if base is not None and not Path(path).is_absolute():
            path = str(base / path)
        entries.append(ManifestEntry(path, 1 if label == "cg" else 0, ident))
    return entries


def load_image_tensor(path, means=DEFAULT_MEAN_RGB, channel_order="RGB") -> np.ndarray:
    return to_input_tensor(resize_bilinear(read_ppm(path)), means, channel_order)
