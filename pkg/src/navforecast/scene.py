"""Scene representation: labeled cell grids, the patch partition and trajectories.

World coordinates are continuous: ``x`` runs along grid columns and ``y``
along grid rows, both in world units (``cell_size`` world units per cell).
Cell ``(col, row)`` covers ``[col, col + 1) x [row, row + 1)`` in cell units.
Headings are measured counterclockwise from the ``+x`` axis ("east"), with
``+y`` as "north".
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .netpbm import read_pgm
from .utils import InsufficientDataError, NavForecastError, ValidationError, atomic_write_text

DEFAULT_PATCH_SIZE = 16


class OutOfSceneError(NavForecastError):
    """A world point lies outside the scene bounds."""


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SemanticGrid:
    """Per-cell class labels of a scene, stored row-major as ``(height, width)``."""

    labels: np.ndarray
    class_count: int
    cell_size: float = 1.0

    def __post_init__(self) -> None:
        labels = np.asarray(self.labels)
        if labels.ndim != 2 or labels.shape[0] == 0 or labels.shape[1] == 0:
            raise ValidationError(f"label grid must be a non-empty 2-D array, got shape {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            raise ValidationError("labels must be integers")
        if self.class_count <= 0:
            raise ValidationError(f"class_count must be positive, got {self.class_count}")
        if not self.cell_size > 0:
            raise ValidationError(f"cell_size must be positive, got {self.cell_size}")
        lo, hi = int(labels.min()), int(labels.max())
        if lo < 0 or hi >= self.class_count:
            raise ValidationError(f"labels must lie in [0, {self.class_count}), found range [{lo}, {hi}]")
        object.__setattr__(self, "labels", _frozen(labels.astype(np.int32)))
        object.__setattr__(self, "cell_size", float(self.cell_size))

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def diagonal(self) -> float:
        """Length of the scene diagonal in world units."""
        return math.hypot(self.width, self.height) * self.cell_size

    def patch_grid(self, patch_size: int = DEFAULT_PATCH_SIZE) -> PatchGrid:
        return PatchGrid(self.width, self.height, patch_size, self.cell_size)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SemanticGrid):
            return NotImplemented
        return (
            self.class_count == other.class_count
            and self.cell_size == other.cell_size
            and np.array_equal(self.labels, other.labels)
        )


@dataclass(frozen=True)
class PatchGrid:
    """Uniform square partition of a ``width x height`` cell grid.

    Patches are indexed either as ``(col, row)`` pairs or by the flat index
    ``row * patch_cols + col``. A point lying exactly on an interior patch
    boundary belongs to the patch with the smaller index, so patch ``k`` along
    an axis covers ``(k * side, (k + 1) * side]`` except patch 0, which also
    owns the scene edge at 0.
    """

    width: int
    height: int
    patch_size: int = DEFAULT_PATCH_SIZE
    cell_size: float = 1.0

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValidationError(f"grid dimensions must be positive, got {self.width}x{self.height}")
        if self.patch_size <= 0:
            raise ValidationError(f"patch_size must be positive, got {self.patch_size}")
        if not self.cell_size > 0:
            raise ValidationError(f"cell_size must be positive, got {self.cell_size}")
        object.__setattr__(self, "cell_size", float(self.cell_size))

    @property
    def patch_cols(self) -> int:
        return -(-self.width // self.patch_size)

    @property
    def patch_rows(self) -> int:
        return -(-self.height // self.patch_size)

    @property
    def num_patches(self) -> int:
        return self.patch_cols * self.patch_rows

    @property
    def patch_side(self) -> float:
        """Patch side length in world units."""
        return self.patch_size * self.cell_size

    @property
    def extent(self) -> tuple[float, float]:
        return self.width * self.cell_size, self.height * self.cell_size

    def contains(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        w, h = self.extent
        return (pts[..., 0] >= 0.0) & (pts[..., 0] <= w) & (pts[..., 1] >= 0.0) & (pts[..., 1] <= h)

    def locate(self, points: np.ndarray) -> np.ndarray:
        """Flat patch index for each point, ``-1`` where the point is out of scene."""
        pts = np.asarray(points, dtype=float)
        inside = self.contains(pts)
        side = self.patch_side
        with np.errstate(invalid="ignore"):
            col = np.ceil(pts[..., 0] / side) - 1.0
            row = np.ceil(pts[..., 1] / side) - 1.0
        col = np.clip(np.nan_to_num(col), 0, self.patch_cols - 1).astype(np.int64)
        row = np.clip(np.nan_to_num(row), 0, self.patch_rows - 1).astype(np.int64)
        return np.where(inside, row * self.patch_cols + col, -1)

    def flat_index(self, patch: tuple[int, int]) -> int:
        col, row = patch
        if not (0 <= col < self.patch_cols and 0 <= row < self.patch_rows):
            raise IndexError(f"patch {patch} outside {self.patch_cols}x{self.patch_rows} patch grid")
        return row * self.patch_cols + col

    def patch_of(self, index: int) -> tuple[int, int]:
        return index % self.patch_cols, index // self.patch_cols

    def cell_bounds(self, patch: tuple[int, int]) -> tuple[int, int, int, int]:
        """``(col0, col1, row0, row1)`` half-open cell ranges covered by a patch."""
        col, row = patch
        ps = self.patch_size
        return col * ps, min((col + 1) * ps, self.width), row * ps, min((row + 1) * ps, self.height)

    def centroid(self, patch: tuple[int, int]) -> tuple[float, float]:
        """Centroid of the in-bounds cells of a patch, in world units."""
        c0, c1, r0, r1 = self.cell_bounds(patch)
        return 0.5 * (c0 + c1) * self.cell_size, 0.5 * (r0 + r1) * self.cell_size


def world_to_patch(point: Sequence[float], grid: PatchGrid) -> tuple[int, int]:
    """Return the ``(col, row)`` patch containing ``point``.

    Raises :class:`OutOfSceneError` when the point lies outside the scene.
    """
    idx = int(grid.locate(np.asarray(point, dtype=float)))
    if idx < 0:
        raise OutOfSceneError(f"point {tuple(point)} is outside the scene {grid.extent}")
    return grid.patch_of(idx)


def finite_diff_derivatives(positions: np.ndarray) -> np.ndarray:
    """First and second derivatives of a sampled 2-D curve with unit spacing.

    Central differences are used at interior samples; the endpoints use
    one-sided differences (the second derivative is copied from the nearest
    interior sample). Returns an ``(n, 4)`` array of ``(dx, dy, ddx, ddy)``.
    """
    pos = np.asarray(positions, dtype=float)
    if pos.ndim != 2 or pos.shape[1] != 2:
        raise ValueError(f"positions must have shape (n, 2), got {pos.shape}")
    n = len(pos)
    if n < 3:
        raise InsufficientDataError(f"need at least 3 samples for derivatives, got {n}")
    first = np.empty_like(pos)
    first[1:-1] = 0.5 * (pos[2:] - pos[:-2])
    first[0] = pos[1] - pos[0]
    first[-1] = pos[-1] - pos[-2]
    second = np.empty_like(pos)
    second[1:-1] = pos[2:] - 2.0 * pos[1:-1] + pos[:-2]
    second[0] = second[1]
    second[-1] = second[-2]
    return np.column_stack([first, second])


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Positions of one agent at strictly increasing integer frames."""

    agent_id: str
    class_id: str
    frames: np.ndarray
    positions: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames)
        pos = np.asarray(self.positions, dtype=float)
        if frames.ndim != 1 or pos.shape != (len(frames), 2):
            raise ValidationError(
                f"trajectory {self.agent_id!r}: frames {frames.shape} and positions {pos.shape} do not match"
            )
        if len(frames) and not np.issubdtype(frames.dtype, np.integer):
            raise ValidationError(f"trajectory {self.agent_id!r}: frames must be integers")
        if np.any(np.diff(frames) <= 0):
            raise ValidationError(f"trajectory {self.agent_id!r}: frames must be strictly increasing")
        if not np.all(np.isfinite(pos)):
            raise ValidationError(f"trajectory {self.agent_id!r}: positions must be finite")
        object.__setattr__(self, "frames", _frozen(frames.astype(np.int64)))
        object.__setattr__(self, "positions", _frozen(pos))
        object.__setattr__(self, "agent_id", str(self.agent_id))
        object.__setattr__(self, "class_id", str(self.class_id))

    @classmethod
    def from_points(cls, agent_id: str, class_id: str, points: Iterable[Sequence[float]], start_frame: int = 0):
        pos = np.asarray(list(points), dtype=float).reshape(-1, 2)
        return cls(agent_id, class_id, np.arange(start_frame, start_frame + len(pos)), pos)

    def __len__(self) -> int:
        return len(self.frames)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return (
            self.agent_id == other.agent_id
            and self.class_id == other.class_id
            and np.array_equal(self.frames, other.frames)
            and np.array_equal(self.positions, other.positions)
        )


# ---------------------------------------------------------------- file IO

def read_text_grid(path: str | os.PathLike) -> SemanticGrid:
    """Read the plain-text label format: header ``W H C cell_size`` then rows."""
    path = str(path)
    with open(path, encoding="utf-8") as fh:
        lines = [(i + 1, ln.split()) for i, ln in enumerate(fh) if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise ValidationError(f"{path}: empty grid file")
    lineno, header = lines[0]
    if len(header) != 4:
        raise ValidationError(f"{path}:{lineno}: header must be 'W H C cell_size', got {len(header)} fields")
    try:
        width, height, classes = int(header[0]), int(header[1]), int(header[2])
        cell_size = float(header[3])
    except ValueError as exc:
        raise ValidationError(f"{path}:{lineno}: malformed header ({exc})") from None
    rows = lines[1:]
    if len(rows) != height:
        raise ValidationError(f"{path}: expected {height} label rows, found {len(rows)}")
    labels = np.empty((height, width), dtype=np.int64)
    for r, (lineno, fields) in enumerate(rows):
        if len(fields) != width:
            raise ValidationError(f"{path}:{lineno}: expected {width} labels, found {len(fields)}")
        for c, tok in enumerate(fields):
            try:
                value = int(tok)
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: field {c + 1}: expected integer label, got {tok!r}") from None
            if not 0 <= value < classes:
                raise ValidationError(f"{path}:{lineno}: field {c + 1}: label {value} outside [0, {classes})")
            labels[r, c] = value
    return SemanticGrid(labels, classes, cell_size)


def format_text_grid(grid: SemanticGrid) -> str:
    out = [f"{grid.width} {grid.height} {grid.class_count} {grid.cell_size!r}"]
    out.extend(" ".join(str(int(v)) for v in row) for row in grid.labels)
    return "\n".join(out) + "\n"


def write_text_grid(path: str | os.PathLike, grid: SemanticGrid) -> None:
    atomic_write_text(path, format_text_grid(grid))


def read_label_grid(
    path: str | os.PathLike, class_count: int | None = None, cell_size: float = 1.0
) -> SemanticGrid:
    """Load a label grid from a PGM (pixel value = class id) or text grid file.

    For PGM input the class count defaults to ``max label + 1``.
    """
    with open(path, "rb") as fh:
        magic = fh.read(2)
    if magic in (b"P2", b"P5"):
        labels = read_pgm(path)
        count = class_count if class_count is not None else int(labels.max()) + 1
        return SemanticGrid(labels, count, cell_size)
    grid = read_text_grid(path)
    if class_count is not None and class_count != grid.class_count:
        raise ValidationError(f"{path}: file declares {grid.class_count} classes, expected {class_count}")
    return grid


TRAJECTORY_HEADER = ("agent_id", "class", "frame", "x", "y")


def read_trajectories(path: str | os.PathLike) -> list[Trajectory]:
    """Read the ``agent_id,class,frame,x,y`` CSV format, one sample per row."""
    path = str(path)
    grouped: dict[str, tuple[str, list[int], list[tuple[float, float]]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValidationError(f"{path}: empty trajectory file")
        if tuple(h.strip() for h in header) != TRAJECTORY_HEADER:
            raise ValidationError(f"{path}:1: header must be {','.join(TRAJECTORY_HEADER)}, got {','.join(header)}")
        for row in reader:
            lineno = reader.line_num
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != 5:
                raise ValidationError(f"{path}:{lineno}: expected 5 fields, found {len(row)}")
            agent, cls = row[0].strip(), row[1].strip()
            try:
                frame = int(row[2])
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: field 'frame': expected integer, got {row[2]!r}") from None
            xy = []
            for name, tok in (("x", row[3]), ("y", row[4])):
                try:
                    v = float(tok)
                except ValueError:
                    raise ValidationError(f"{path}:{lineno}: field {name!r}: expected number, got {tok!r}") from None
                if not math.isfinite(v):
                    raise ValidationError(f"{path}:{lineno}: field {name!r}: value must be finite")
                xy.append(v)
            if agent not in grouped:
                grouped[agent] = (cls, [], [])
            entry = grouped[agent]
            if entry[0] != cls:
                raise ValidationError(f"{path}:{lineno}: agent {agent!r} changes class from {entry[0]!r} to {cls!r}")
            if entry[1] and frame <= entry[1][-1]:
                raise ValidationError(f"{path}:{lineno}: agent {agent!r}: frames must be strictly increasing")
            entry[1].append(frame)
            entry[2].append((xy[0], xy[1]))
    return [
        Trajectory(agent, cls, np.asarray(frames, dtype=np.int64), np.asarray(pts, dtype=float))
        for agent, (cls, frames, pts) in grouped.items()
    ]


def format_trajectories(trajectories: Iterable[Trajectory]) -> str:
    lines = [",".join(TRAJECTORY_HEADER)]
    for traj in trajectories:
        for frame, (x, y) in zip(traj.frames, traj.positions):
            lines.append(f"{traj.agent_id},{traj.class_id},{int(frame)},{float(x)!r},{float(y)!r}")
    return "\n".join(lines) + "\n"


def write_trajectories(path: str | os.PathLike, trajectories: Iterable[Trajectory]) -> None:
    atomic_write_text(path, format_trajectories(trajectories))


def list_classes(trajectories: Iterable[Trajectory]) -> list[str]:
    return sorted({t.class_id for t in trajectories})
