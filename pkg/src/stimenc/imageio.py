"""IDX3 dataset parsing and binary PGM input/output."""

from __future__ import annotations

import gzip
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX3_MAGIC = 0x00000803


class ImageFormatError(ValueError):
    pass


@dataclass(frozen=True)
class IdxDataset:
    count: int
    height: int
    width: int
    pixels: np.ndarray  # uint8, (count, height, width)

    def image(self, i: int) -> np.ndarray:
        return self.pixels[i]

    def normalized(self, i: int) -> np.ndarray:
        return self.pixels[i].astype(np.float64) / 255.0

    def __len__(self):
        return self.count


def parse_idx(data: bytes) -> IdxDataset:
    """Parse a big-endian IDX3 (unsigned byte, 3-D) image file."""
    if len(data) < 16:
        raise ImageFormatError("IDX stream too short for a header")
    magic, count, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != IDX3_MAGIC:
        raise ImageFormatError(f"not an IDX3 ubyte image file (magic 0x{magic:08x})")
    expected = count * rows * cols
    if expected > len(data) - 16:
        raise ImageFormatError(f"payload has {len(data) - 16} bytes, header declares {expected}")
    if expected != len(data) - 16:
        raise ImageFormatError("trailing bytes after IDX payload")
    pix = np.frombuffer(data, np.uint8, expected, 16).reshape(count, rows, cols)
    pix.setflags(write=False)
    return IdxDataset(count, rows, cols, pix)


def load_idx(path) -> IdxDataset:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return parse_idx(raw)


def to_target(img, shape: tuple[int, int], resample: bool = False) -> np.ndarray:
    """Row-major target percept in ``[0, 1]`` from an 8-bit image.

    ``shape`` is the percept grid ``(height, width)``.  Other image sizes are
    only accepted with ``resample=True`` (Lanczos-3).
    """
    img = np.asarray(img)
    x = img.astype(np.float64) / 255.0
    if img.shape != tuple(shape):
        if not resample:
            raise ValueError(f"image {img.shape} does not match grid {tuple(shape)}")
        from .baselines import ResampleSpec, downsample
        return downsample(x, ResampleSpec(img.shape[1], img.shape[0], shape[1], shape[0]))
    return x.ravel()


def quantize(img) -> np.ndarray:
    """[0, 1] -> uint8, rounding half away from zero."""
    v = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0
    return np.floor(v + 0.5).astype(np.uint8)


def write_pgm(img, path) -> None:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("write_pgm expects a 2-D image")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(quantize(img).tobytes())


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def parse_pgm(data: bytes) -> np.ndarray:
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise ImageFormatError("truncated PGM header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != b"P5":
        raise ImageFormatError(f"unsupported PGM magic {fields[0]!r}")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise ImageFormatError("malformed PGM header") from exc
    if w < 1 or h < 1 or not 0 < maxval < 256:
        raise ImageFormatError("unsupported PGM dimensions or maxval")
    pos += 1  # single whitespace byte after maxval
    if len(data) - pos < w * h:
        raise ImageFormatError("truncated PGM raster")
    raster = np.frombuffer(data, np.uint8, w * h, pos).reshape(h, w)
    return raster.astype(np.float64) / maxval


def read_pgm(path) -> np.ndarray:
    return parse_pgm(Path(path).read_bytes())
