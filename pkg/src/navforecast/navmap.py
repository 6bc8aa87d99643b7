"""Per-class navigation maps learned from observed trajectories.

Every patch of a :class:`~navforecast.scene.PatchGrid` carries four statistics
describing how agents of one class leave it:

* popularity ``rho``: visit count relative to the busiest patch,
* routing ``xi``: saturated mean path curvature,
* a histogram of directions over a stop symbol (index 0) and eight compass
  headings (indices 1..8, east = 1, counterclockwise in 45 degree steps),
* per-heading Gamma speed models summarised by ``(mean, std, count)``.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .netpbm import encode_pgm
from .scene import PatchGrid, Trajectory, finite_diff_derivatives
from .utils import InsufficientDataError, ValidationError, atomic_write_bytes, atomic_write_text

log = logging.getLogger(__name__)

N_DIRECTIONS = 8
STOP = 0
SECTOR = 2.0 * math.pi / N_DIRECTIONS

#: heading (radians) of direction index ``i`` for ``i = 1..8``; entry 0 is unused
DIRECTION_ANGLES = np.array([0.0] + [k * SECTOR for k in range(N_DIRECTIONS)])

_H = math.sqrt(0.5)
#: exact unit vectors per direction index, so axis-aligned motion stays axis-aligned
DIRECTION_VECTORS = np.array(
    [(0.0, 0.0), (1.0, 0.0), (_H, _H), (0.0, 1.0), (-_H, _H), (-1.0, 0.0), (-_H, -_H), (0.0, -1.0), (_H, -_H)]
)

MAP_FORMAT = "navforecast.navmap"


@dataclass(frozen=True)
class BuilderConfig:
    """Knobs for :func:`build_map`. Speeds are in world units per frame."""

    stop_threshold: float = 0.05
    kappa0: float = 0.2
    sigma_floor: float = 1e-3
    curvature_min_speed: float | None = None

    def __post_init__(self) -> None:
        if self.stop_threshold < 0:
            raise ValidationError("stop_threshold must be non-negative")
        if not self.kappa0 > 0:
            raise ValidationError("kappa0 must be positive")
        if not self.sigma_floor > 0:
            raise ValidationError("sigma_floor must be positive")

    @property
    def min_speed(self) -> float:
        """Speed below which curvature samples are skipped."""
        if self.curvature_min_speed is not None:
            return self.curvature_min_speed
        return max(self.stop_threshold, 1e-9)


@dataclass(frozen=True)
class SpeedFit:
    mu: float
    sigma: float
    n: int

    @property
    def shape(self) -> float:
        return gamma_params(self.mu, self.sigma)[0]

    @property
    def scale(self) -> float:
        return gamma_params(self.mu, self.sigma)[1]


@dataclass(frozen=True)
class PatchStats:
    """Statistics of a single observed patch."""

    rho: float
    xi: float
    hod: tuple[float, ...]
    hos: tuple[SpeedFit, ...]


# ------------------------------------------------------------ primitives

def quantize_directions(theta: np.ndarray, omega: np.ndarray, stop_threshold: float = 0.05) -> np.ndarray:
    """Vectorised :func:`quantize_direction`."""
    theta = np.asarray(theta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    sector = np.floor(theta / SECTOR + 0.5).astype(np.int64) % N_DIRECTIONS
    return np.where(omega < stop_threshold, STOP, sector + 1)


def quantize_direction(theta: float, omega: float, stop_threshold: float = 0.05) -> int:
    """Map a polar velocity to a direction index in ``[0, 8]``.

    Speeds below ``stop_threshold`` map to the stop symbol 0. Otherwise the
    heading goes to the nearest 45 degree sector centre; index 1 is east and
    indices increase counterclockwise. Exact sector edges round upward.
    """
    if omega < 0:
        raise ValueError("speed must be non-negative")
    return int(quantize_directions(theta, omega, stop_threshold))


def curvatures(derivs: np.ndarray, min_speed: float = 1e-9) -> np.ndarray:
    """Curvature per row of ``(dx, dy, ddx, ddy)``; NaN where speed <= min_speed."""
    d = np.asarray(derivs, dtype=float).reshape(-1, 4)
    dx, dy, ddx, ddy = d.T
    speed_sq = dx * dx + dy * dy
    ok = speed_sq > min_speed * min_speed
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.abs(dx * ddy - dy * ddx) / speed_sq**1.5
    return np.where(ok, k, np.nan)


def curvature(derivs: Sequence[float], min_speed: float = 1e-9) -> float | None:
    """Curvature ``|x'y'' - y'x''| / (x'^2 + y'^2)^(3/2)`` of one sample.

    Returns ``None`` when the speed is too small for the value to be defined.
    """
    k = float(curvatures(np.asarray(derivs, dtype=float), min_speed)[0])
    return None if math.isnan(k) else k


def fit_speed_histogram(speeds: Sequence[float], sigma_floor: float = 1e-3) -> tuple[float, float] | None:
    """Method-of-moments fit of positive speeds: ``(mean, std)``.

    Returns ``None`` for an empty sample. The standard deviation is the
    population value, floored at ``sigma_floor``.
    """
    s = np.asarray(speeds, dtype=float)
    if s.size == 0:
        return None
    if np.any(s <= 0):
        raise ValidationError("speeds must be strictly positive")
    mu = float(s.mean())
    sigma = float(np.sqrt(np.mean((s - mu) ** 2))) if s.size > 1 else 0.0
    return mu, max(sigma, sigma_floor)


def gamma_params(mu: float, sigma: float) -> tuple[float, float]:
    """Gamma ``(shape, scale)`` with the given mean and standard deviation."""
    return mu * mu / (sigma * sigma), sigma * sigma / mu


def total_variation(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p, dtype=float) - np.asarray(q, dtype=float)).sum())


# ------------------------------------------------------------ the map

@dataclass(eq=False)
class NavigationMap:
    """Array-backed navigation statistics for one agent class.

    All arrays are indexed by flat patch index. ``hod`` has shape ``(P, 9)``;
    ``speed_mu``, ``speed_sigma`` and ``speed_n`` have shape ``(P, 8)`` with
    column ``i - 1`` holding the fit for direction index ``i``. Unobserved
    patches carry zeros everywhere.
    """

    class_id: str
    grid: PatchGrid
    rho: np.ndarray
    xi: np.ndarray
    hod: np.ndarray
    speed_mu: np.ndarray
    speed_sigma: np.ndarray
    speed_n: np.ndarray
    visit_counts: np.ndarray
    observed: np.ndarray
    config: dict = field(default_factory=dict)
    dropped_samples: int = 0

    def __post_init__(self) -> None:
        p = self.grid.num_patches
        shapes = {
            "rho": (p,),
            "xi": (p,),
            "hod": (p, N_DIRECTIONS + 1),
            "speed_mu": (p, N_DIRECTIONS),
            "speed_sigma": (p, N_DIRECTIONS),
            "speed_n": (p, N_DIRECTIONS),
            "visit_counts": (p,),
            "observed": (p,),
        }
        for name, shape in shapes.items():
            arr = np.asarray(getattr(self, name))
            if arr.shape != shape:
                raise ValidationError(f"navigation map field {name!r} has shape {arr.shape}, expected {shape}")
            arr = arr.astype(bool if name == "observed" else np.int64 if name in ("speed_n", "visit_counts") else float)
            arr.setflags(write=False)
            setattr(self, name, arr)

    @property
    def num_patches(self) -> int:
        return self.grid.num_patches

    def stats(self, patch: int | tuple[int, int]) -> PatchStats | None:
        """Statistics of one patch, or ``None`` if the patch is unobserved."""
        idx = patch if isinstance(patch, (int, np.integer)) else self.grid.flat_index(patch)
        if not self.observed[idx]:
            return None
        hos = tuple(
            SpeedFit(float(m), float(s), int(n))
            for m, s, n in zip(self.speed_mu[idx], self.speed_sigma[idx], self.speed_n[idx])
        )
        return PatchStats(float(self.rho[idx]), float(self.xi[idx]), tuple(float(v) for v in self.hod[idx]), hos)

    def field(self, name: str) -> np.ndarray:
        if name not in ("rho", "xi"):
            raise ValueError(f"unknown field {name!r}; expected 'rho' or 'xi'")
        return getattr(self, name)

    # -- serialisation

    def to_dict(self) -> dict:
        g = self.grid
        patches = []
        for idx in range(g.num_patches):
            if self.visit_counts[idx] == 0 and not self.observed[idx]:
                continue
            col, row = g.patch_of(idx)
            patches.append(
                {
                    "index": idx,
                    "col": col,
                    "row": row,
                    "visit_count": int(self.visit_counts[idx]),
                    "observed": bool(self.observed[idx]),
                    "rho": float(self.rho[idx]),
                    "xi": float(self.xi[idx]),
                    "hod": [float(v) for v in self.hod[idx]],
                    "hos": [
                        {"mu": float(m), "sigma": float(s), "n": int(n)}
                        for m, s, n in zip(self.speed_mu[idx], self.speed_sigma[idx], self.speed_n[idx])
                    ],
                }
            )
        return {
            "format": MAP_FORMAT,
            "version": 1,
            "class": self.class_id,
            "grid": {
                "width": g.width,
                "height": g.height,
                "patch_size": g.patch_size,
                "cell_size": g.cell_size,
                "patch_cols": g.patch_cols,
                "patch_rows": g.patch_rows,
            },
            "directions": N_DIRECTIONS,
            "config": self.config,
            "dropped_samples": int(self.dropped_samples),
            "patches": patches,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, doc: dict, source: str = "<map>") -> NavigationMap:
        try:
            if doc.get("format") != MAP_FORMAT:
                raise ValidationError(f"{source}: not a navigation map (format {doc.get('format')!r})")
            if doc.get("directions") != N_DIRECTIONS:
                raise ValidationError(f"{source}: unsupported direction count {doc.get('directions')!r}")
            gd = doc["grid"]
            grid = PatchGrid(int(gd["width"]), int(gd["height"]), int(gd["patch_size"]), float(gd["cell_size"]))
            p = grid.num_patches
            arrays = {
                "rho": np.zeros(p),
                "xi": np.zeros(p),
                "hod": np.zeros((p, N_DIRECTIONS + 1)),
                "speed_mu": np.zeros((p, N_DIRECTIONS)),
                "speed_sigma": np.zeros((p, N_DIRECTIONS)),
                "speed_n": np.zeros((p, N_DIRECTIONS), dtype=np.int64),
                "visit_counts": np.zeros(p, dtype=np.int64),
                "observed": np.zeros(p, dtype=bool),
            }
            for k, rec in enumerate(doc["patches"]):
                idx = int(rec["index"])
                if not 0 <= idx < p:
                    raise ValidationError(f"{source}: patches[{k}]: index {idx} outside [0, {p})")
                hod = rec["hod"]
                hos = rec["hos"]
                if len(hod) != N_DIRECTIONS + 1 or len(hos) != N_DIRECTIONS:
                    raise ValidationError(f"{source}: patches[{k}]: expected hod[9] and hos[8]")
                arrays["rho"][idx] = float(rec["rho"])
                arrays["xi"][idx] = float(rec["xi"])
                arrays["hod"][idx] = [float(v) for v in hod]
                arrays["speed_mu"][idx] = [float(h["mu"]) for h in hos]
                arrays["speed_sigma"][idx] = [float(h["sigma"]) for h in hos]
                arrays["speed_n"][idx] = [int(h["n"]) for h in hos]
                arrays["visit_counts"][idx] = int(rec["visit_count"])
                arrays["observed"][idx] = bool(rec["observed"])
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"{source}: malformed navigation map ({exc!r})") from None
        return cls(
            str(doc["class"]),
            grid,
            config=dict(doc.get("config", {})),
            dropped_samples=int(doc.get("dropped_samples", 0)),
            **arrays,
        )

    def save(self, path: str | os.PathLike) -> None:
        atomic_write_text(path, self.to_json())

    @classmethod
    def load(cls, path: str | os.PathLike) -> NavigationMap:
        path = str(path)
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
        return cls.from_dict(doc, path)


def empty_arrays(num_patches: int) -> dict[str, np.ndarray]:
    return {
        "rho": np.zeros(num_patches),
        "xi": np.zeros(num_patches),
        "hod": np.zeros((num_patches, N_DIRECTIONS + 1)),
        "speed_mu": np.zeros((num_patches, N_DIRECTIONS)),
        "speed_sigma": np.zeros((num_patches, N_DIRECTIONS)),
        "speed_n": np.zeros((num_patches, N_DIRECTIONS), dtype=np.int64),
        "visit_counts": np.zeros(num_patches, dtype=np.int64),
        "observed": np.zeros(num_patches, dtype=bool),
    }


def map_from_patch_stats(
    class_id: str, grid: PatchGrid, stats: dict[int | tuple[int, int], PatchStats], visit_counts: dict | None = None
) -> NavigationMap:
    """Assemble a map from hand-authored per-patch statistics.

    Patches missing from ``stats`` are unobserved. Visit counts default to 1
    for every authored patch.
    """
    arrays = empty_arrays(grid.num_patches)
    for key, st in stats.items():
        idx = key if isinstance(key, (int, np.integer)) else grid.flat_index(key)
        hod = np.asarray(st.hod, dtype=float)
        if hod.shape != (N_DIRECTIONS + 1,) or np.any(hod < 0) or abs(hod.sum() - 1.0) > 1e-9:
            raise ValidationError(f"patch {key}: hod must be a probability vector of length 9")
        if not (0.0 <= st.rho <= 1.0 and 0.0 <= st.xi <= 1.0):
            raise ValidationError(f"patch {key}: rho and xi must lie in [0, 1]")
        arrays["rho"][idx] = st.rho
        arrays["xi"][idx] = st.xi
        arrays["hod"][idx] = hod
        for j, fit in enumerate(st.hos):
            arrays["speed_mu"][idx, j] = fit.mu
            arrays["speed_sigma"][idx, j] = fit.sigma
            arrays["speed_n"][idx, j] = fit.n
        arrays["observed"][idx] = True
        arrays["visit_counts"][idx] = 1 if visit_counts is None else int(visit_counts.get(key, 1))
    return NavigationMap(class_id, grid, **arrays)


# ------------------------------------------------------------ building

def build_map(
    trajectories: Iterable[Trajectory],
    grid: PatchGrid,
    class_id: str,
    config: BuilderConfig | None = None,
) -> NavigationMap:
    """Estimate the navigation map of ``class_id`` from training trajectories.

    Trajectories of other classes are ignored. Samples outside the grid are
    dropped (their count is logged and kept on the map). A patch counts one
    visit each time a trajectory enters it. Direction and speed statistics
    describe the segment leaving a patch, attributed to the patch holding
    the segment's start point.
    """
    cfg = config or BuilderConfig()
    trajs = [t for t in trajectories if t.class_id == class_id and len(t) > 0]
    if not trajs:
        raise InsufficientDataError(f"no trajectories of class {class_id!r} to build a map from")

    n_patches = grid.num_patches
    lengths = np.array([len(t) for t in trajs])
    ends = np.cumsum(lengths)
    starts = ends - lengths
    pos = np.concatenate([t.positions for t in trajs])
    frames = np.concatenate([t.frames for t in trajs])
    total = len(pos)

    patch = grid.locate(pos)
    inside = patch >= 0
    dropped = int(total - inside.sum())
    if dropped:
        log.warning("build_map: dropped %d out-of-scene samples", dropped)

    is_start = np.zeros(total, dtype=bool)
    is_start[starts] = True
    is_last = np.zeros(total, dtype=bool)
    is_last[ends - 1] = True

    prev = np.empty(total, dtype=np.int64)
    prev[0] = -1
    prev[1:] = patch[:-1]
    entry = inside & (is_start | (patch != prev))
    visits = np.bincount(patch[entry], minlength=n_patches)

    # leaving segments
    seg = np.flatnonzero(~is_last & inside)
    disp = (pos[seg + 1] - pos[seg]) / (frames[seg + 1] - frames[seg])[:, None]
    speed = np.hypot(disp[:, 0], disp[:, 1])
    heading = np.arctan2(disp[:, 1], disp[:, 0])
    direction = quantize_directions(heading, speed, cfg.stop_threshold)
    seg_patch = patch[seg]

    hod_counts = np.bincount(seg_patch * (N_DIRECTIONS + 1) + direction, minlength=n_patches * (N_DIRECTIONS + 1))
    hod_counts = hod_counts.reshape(n_patches, N_DIRECTIONS + 1)
    seg_totals = hod_counts.sum(axis=1)
    observed = seg_totals > 0
    hod = np.zeros((n_patches, N_DIRECTIONS + 1))
    hod[observed] = hod_counts[observed] / seg_totals[observed, None]

    moving = direction != STOP
    key = seg_patch[moving] * N_DIRECTIONS + (direction[moving] - 1)
    sp = speed[moving]
    size = n_patches * N_DIRECTIONS
    n = np.bincount(key, minlength=size)
    mu = np.zeros(size)
    has = n > 0
    mu[has] = np.bincount(key, weights=sp, minlength=size)[has] / n[has]
    var = np.zeros(size)
    var[has] = np.bincount(key, weights=(sp - mu[key]) ** 2, minlength=size)[has] / n[has]
    sigma = np.where(has, np.maximum(np.sqrt(var), cfg.sigma_floor), 0.0)

    # curvature samples, flat-averaged per patch
    k_sum = np.zeros(n_patches)
    k_cnt = np.zeros(n_patches, dtype=np.int64)
    long_enough = lengths >= 3
    if long_enough.any():
        derivs = _stacked_derivatives(pos, starts[long_enough], ends[long_enough])
        sel = np.concatenate([np.arange(s, e) for s, e in zip(starts[long_enough], ends[long_enough])])
        k = curvatures(derivs, cfg.min_speed)
        ok = ~np.isnan(k) & inside[sel]
        k_sum = np.bincount(patch[sel][ok], weights=k[ok], minlength=n_patches)
        k_cnt = np.bincount(patch[sel][ok], minlength=n_patches)
    k_mean = np.zeros(n_patches)
    np.divide(k_sum, k_cnt, out=k_mean, where=k_cnt > 0)
    xi = np.where(observed, k_mean / (k_mean + cfg.kappa0), 0.0)

    vmax = visits.max()
    rho = visits / vmax if vmax > 0 else np.zeros(n_patches)

    return NavigationMap(
        class_id,
        grid,
        rho=rho,
        xi=xi,
        hod=hod,
        speed_mu=mu.reshape(n_patches, N_DIRECTIONS),
        speed_sigma=sigma.reshape(n_patches, N_DIRECTIONS),
        speed_n=n.reshape(n_patches, N_DIRECTIONS),
        visit_counts=visits,
        observed=observed,
        config=asdict(cfg),
        dropped_samples=dropped,
    )


def _stacked_derivatives(pos: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """:func:`finite_diff_derivatives` applied to many trajectories at once."""
    parts = []
    for s, e in zip(starts, ends):
        parts.append(finite_diff_derivatives(pos[s:e]))
    return np.concatenate(parts)


# ------------------------------------------------------------ heatmaps

def heatmap_image(navmap: NavigationMap, field_name: str = "rho") -> np.ndarray:
    """Cell-resolution grayscale image of ``rho`` or ``xi``, scaled to 0..255.

    Image row ``r`` corresponds to grid row ``r`` (``y`` grows downward in the
    image).
    """
    values = navmap.field(field_name)
    vmax = float(values.max()) if values.size else 0.0
    scaled = np.zeros(values.shape) if vmax <= 0 else values / vmax
    levels = np.rint(scaled * 255.0).astype(np.uint8)
    g = navmap.grid
    patch_img = levels.reshape(g.patch_rows, g.patch_cols)
    cells = np.repeat(np.repeat(patch_img, g.patch_size, axis=0), g.patch_size, axis=1)
    return cells[: g.height, : g.width]


def write_heatmap(path: str | os.PathLike, navmap: NavigationMap, field_name: str = "rho") -> None:
    atomic_write_bytes(path, encode_pgm(heatmap_image(navmap, field_name)))
