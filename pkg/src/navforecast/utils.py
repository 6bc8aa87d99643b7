"""Small shared helpers: seeded RNG streams, atomic file writes, error types."""

from __future__ import annotations

import os
import tempfile
import zlib
from pathlib import Path

import numpy as np


class NavForecastError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(NavForecastError, ValueError):
    """Malformed input data (bad file contents, inconsistent arguments)."""


class InsufficientDataError(ValidationError):
    """Not enough samples to compute the requested quantity."""


def derive_rng(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """Independent generator for the stream identified by ``(seed, tag, index)``.

    Streams for different tags or indices never overlap, so adding a new
    consumer does not shift the draws seen by existing ones.
    """
    tag_key = zlib.crc32(tag.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), tag_key, int(index)]))


def _umask() -> int:
    mask = os.umask(0)
    os.umask(mask)
    return mask


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    """Write via a temporary file in the target directory, then rename."""
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))
