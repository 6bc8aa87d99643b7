"""Raster overlays of predicted paths on a scene (PPM output)."""

from __future__ import annotations

import os
from typing import Sequence

import numpy as np

from .dbn import Prediction, TargetState
from .navmap import NavigationMap, heatmap_image
from .netpbm import write_ppm
from .scene import SemanticGrid

# qualitative palette, cycled for label ids beyond its length
PALETTE = np.array(
    [
        [110, 160, 90],
        [120, 120, 120],
        [200, 190, 170],
        [150, 80, 60],
        [80, 130, 200],
        [220, 200, 80],
        [160, 100, 170],
        [90, 180, 180],
    ],
    dtype=np.uint8,
)
SAMPLE_COLOR = (255, 255, 255)
SELECTED_COLOR = (230, 30, 30)
START_COLOR = (20, 20, 230)


def label_image(grid: SemanticGrid) -> np.ndarray:
    """RGB image of the label grid, one pixel per cell."""
    return PALETTE[grid.labels % len(PALETTE)].copy()


def rho_image(navmap: NavigationMap) -> np.ndarray:
    gray = heatmap_image(navmap, "rho")
    return np.repeat(gray[..., None], 3, axis=2)


def draw_polyline(img: np.ndarray, points: np.ndarray, cell_size: float, color: Sequence[int]) -> None:
    """Rasterise a world-space polyline in place, sampling every half cell."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2) / cell_size
    if len(pts) == 0:
        return
    h, w = img.shape[:2]
    segs = [pts[:1]]
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(int(np.ceil(2 * np.hypot(*(b - a)))), 1)
        t = np.linspace(0.0, 1.0, n + 1)[1:, None]
        segs.append(a + t * (b - a))
    cells = np.floor(np.vstack(segs)).astype(np.int64)
    cells[:, 0] = np.clip(cells[:, 0], 0, w - 1)
    cells[:, 1] = np.clip(cells[:, 1], 0, h - 1)
    img[cells[:, 1], cells[:, 0]] = color


def overlay_image(
    background: np.ndarray, prediction: Prediction, start: TargetState, cell_size: float = 1.0
) -> np.ndarray:
    """Background with every sampled path, then the selected path and start on top."""
    img = np.array(background, dtype=np.uint8, copy=True)
    for path in prediction.samples:
        draw_polyline(img, path.with_start(start), cell_size, SAMPLE_COLOR)
    draw_polyline(img, prediction.selected.with_start(start), cell_size, SELECTED_COLOR)
    draw_polyline(img, np.array([start.position]), cell_size, START_COLOR)
    return img


def write_overlay(
    path: str | os.PathLike,
    navmap: NavigationMap,
    prediction: Prediction,
    start: TargetState,
    grid: SemanticGrid | None = None,
) -> None:
    """Write a PPM; the background is the label grid if given, else the rho heatmap."""
    if grid is not None and (grid.width, grid.height) != (navmap.grid.width, navmap.grid.height):
        raise ValueError("label grid and map sizes differ")
    background = label_image(grid) if grid is not None else rho_image(navmap)
    write_ppm(path, overlay_image(background, prediction, start, navmap.grid.cell_size))
