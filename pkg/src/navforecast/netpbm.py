"""Minimal PGM/PPM reading and writing.

Only the netpbm subset this package exchanges is supported: plain (P2) and
binary (P5) graymaps on input, binary graymaps (P5) and pixmaps (P6) on output.
"""

from __future__ import annotations

import os

import numpy as np

from .utils import ValidationError, atomic_write_bytes


def _tokens(data: bytes, count: int, start: int, path: str) -> tuple[list[int], int]:
    """Read ``count`` whitespace-separated integers starting at ``start``.

    Returns the integers and the offset just past the last one.
    """
    values: list[int] = []
    pos = start
    n = len(data)
    while len(values) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos >= n:
            raise ValidationError(f"{path}: truncated header or data (expected {count} values, got {len(values)})")
        end = pos
        while end < n and not data[end : end + 1].isspace() and data[end : end + 1] != b"#":
            end += 1
        tok = data[pos:end]
        try:
            values.append(int(tok))
        except ValueError:
            line = data.count(b"\n", 0, pos) + 1
            raise ValidationError(f"{path}:{line}: expected integer, got {tok!r}") from None
        pos = end
    return values, pos


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    """Load a P2 or P5 graymap as an ``(height, width)`` integer array."""
    path = str(path)
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise ValidationError(f"{path}: not a PGM file (magic {magic!r}, expected P2 or P5)")
    (width, height, maxval), pos = _tokens(data, 3, 2, path)
    if width <= 0 or height <= 0:
        raise ValidationError(f"{path}: invalid dimensions {width}x{height}")
    if not 0 < maxval < 65536:
        raise ValidationError(f"{path}: invalid maxval {maxval}")
    if magic == b"P2":
        values, _ = _tokens(data, width * height, pos, path)
        arr = np.asarray(values, dtype=np.int64)
        if arr.size and (arr.min() < 0 or arr.max() > maxval):
            raise ValidationError(f"{path}: pixel value outside [0, {maxval}]")
    else:
        # exactly one whitespace byte separates the header from the raster
        pos += 1
        dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
        need = width * height * np.dtype(dtype).itemsize
        raster = data[pos : pos + need]
        if len(raster) < need:
            raise ValidationError(f"{path}: raster truncated ({len(raster)} of {need} bytes)")
        arr = np.frombuffer(raster, dtype=dtype).astype(np.int64)
    return arr.reshape(height, width)


def encode_pgm(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("PGM image must be 2-D")
    if image.min(initial=0) < 0 or image.max(initial=0) > 255:
        raise ValueError("PGM values must lie in [0, 255]")
    h, w = image.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + image.astype(np.uint8).tobytes()


def encode_ppm(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("PPM image must be (height, width, 3)")
    h, w, _ = image.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.clip(image, 0, 255).astype(np.uint8).tobytes()


def write_pgm(path: str | os.PathLike, image: np.ndarray) -> None:
    atomic_write_bytes(path, encode_pgm(image))


def write_ppm(path: str | os.PathLike, image: np.ndarray) -> None:
    atomic_write_bytes(path, encode_ppm(image))


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    """Load a binary P6 pixmap (8-bit) as ``(height, width, 3)``."""
    path = str(path)
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:2] != b"P6":
        raise ValidationError(f"{path}: not a binary PPM file")
    (width, height, maxval), pos = _tokens(data, 3, 2, path)
    if maxval != 255:
        raise ValidationError(f"{path}: only maxval 255 is supported")
    pos += 1
    need = width * height * 3
    raster = data[pos : pos + need]
    if len(raster) < need:
        raise ValidationError(f"{path}: raster truncated")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3).copy()
