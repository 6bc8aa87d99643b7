"""Synthetic scenes with known ground-truth navigation behaviour.

Each layout paints a label grid and hand-authors a generator map on the road
patches; trajectories are then sampled from that map with the path sampler.
Generator direction histograms are uniform on their support so that the
frequencies realised by the sampler equal the authored histogram.

Regions and their default labels: grass 0, road 1, sidewalk 2, building 3,
water 4. Horizontal roads are one-way eastbound with a sidewalk along their
north edge; vertical roads are one-way northbound and lined with buildings on
both sides, so patches of the two road kinds have different surroundings. A
pond in the south-west breaks mirror symmetries of the layout.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .dbn import DEFAULT_ALPHA_CAP, PredictorConfig, TargetState, run_batch
from .navmap import DIRECTION_ANGLES, N_DIRECTIONS, SECTOR, NavigationMap, PatchStats, SpeedFit, map_from_patch_stats
from .scene import PatchGrid, SemanticGrid, Trajectory
from .utils import ValidationError, derive_rng

LAYOUTS = ("straight-corridor", "L-corridor", "crossroads", "roundabout")
REGIONS = ("grass", "road", "sidewalk", "building", "water")
E, N = 1, 3  # direction bins
_MARGIN = 2  # cells kept clear of the road edge at the entry


@dataclass(frozen=True)
class SynthSpec:
    layout: str
    width: int = 160
    height: int = 160
    patch_size: int = 8
    cell_size: float = 1.0
    n_trajectories: int = 100
    seed: int = 0
    class_id: str = "pedestrian"
    speed_mu: float = 1.0
    speed_sigma: float = 0.1
    noise: float | None = None  # None: 0 for the straight corridor, 0.05 otherwise
    road_widths: tuple[int, int] = (3, 5)  # horizontal, vertical road widths in patches
    offset: tuple[int, int] = (0, 0)  # shift of the road network in patches
    labels: dict = field(default_factory=lambda: {r: i for i, r in enumerate(REGIONS)})
    t_max: int | None = None

    def __post_init__(self) -> None:
        if self.layout not in LAYOUTS:
            raise ValidationError(f"unknown layout {self.layout!r}; expected one of {', '.join(LAYOUTS)}")
        for name in ("width", "height", "patch_size"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
                raise ValidationError(f"{name} must be a positive integer, got {v!r}")
        if not isinstance(self.n_trajectories, int) or self.n_trajectories < 0:
            raise ValidationError(f"n_trajectories must be a non-negative integer, got {self.n_trajectories!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ValidationError(f"seed must be a non-negative integer, got {self.seed!r}")
        if not self.cell_size > 0 or not self.speed_mu > 0 or not self.speed_sigma > 0:
            raise ValidationError("cell_size, speed_mu and speed_sigma must be positive")
        if self.noise is not None and self.noise < 0:
            raise ValidationError("noise must be non-negative")
        if self.t_max is not None and self.t_max < 1:
            raise ValidationError("t_max must be at least 1")
        try:
            widths = tuple(int(v) for v in self.road_widths)
            offset = tuple(int(v) for v in self.offset)
        except (TypeError, ValueError):
            raise ValidationError("road_widths and offset must be integer pairs") from None
        if len(widths) != 2 or len(offset) != 2 or min(widths) < 1:
            raise ValidationError("road_widths must be two positive integers and offset two integers")
        object.__setattr__(self, "road_widths", widths)
        object.__setattr__(self, "offset", offset)
        if set(self.labels) != set(REGIONS):
            raise ValidationError(f"labels must map exactly the regions {', '.join(REGIONS)}")
        values = [self.labels[r] for r in REGIONS]
        if any(not isinstance(v, int) or v < 0 for v in values) or len(set(values)) != len(values):
            raise ValidationError("region labels must be distinct non-negative integers")
        object.__setattr__(self, "labels", {r: int(self.labels[r]) for r in REGIONS})
        object.__setattr__(self, "cell_size", float(self.cell_size))

    @property
    def effective_noise(self) -> float:
        if self.noise is not None:
            return float(self.noise)
        return 0.0 if self.layout == "straight-corridor" else 0.05

    @property
    def steps(self) -> int:
        if self.t_max is not None:
            return self.t_max
        return int(math.ceil(4 * (self.width + self.height) * self.cell_size / self.speed_mu))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["road_widths"] = list(self.road_widths)
        d["offset"] = list(self.offset)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, doc: dict, source: str = "<spec>") -> SynthSpec:
        if not isinstance(doc, dict):
            raise ValidationError(f"{source}: spec must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ValidationError(f"{source}: unknown field(s) {', '.join(unknown)}")
        if "layout" not in doc:
            raise ValidationError(f"{source}: missing field 'layout'")
        try:
            return cls(**doc)
        except ValidationError as exc:
            raise ValidationError(f"{source}: {exc}") from None
        except TypeError as exc:
            raise ValidationError(f"{source}: {exc}") from None

    @classmethod
    def load(cls, path: str | os.PathLike) -> SynthSpec:
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
        return cls.from_dict(doc, str(path))


@dataclass(eq=False)
class SynthScene:
    spec: SynthSpec
    grid: SemanticGrid
    trajectories: list[Trajectory]
    generator: NavigationMap

    @property
    def patch_grid(self) -> PatchGrid:
        return self.generator.grid


# ------------------------------------------------------------ geometry


class _Canvas:
    """Label grid plus authored direction supports, both in patch/cell units."""

    def __init__(self, spec: SynthSpec):
        self.spec = spec
        self.P = spec.patch_size
        self.pc = -(-spec.width // self.P)
        self.pr = -(-spec.height // self.P)
        self.lab = spec.labels
        self.cells = np.full((spec.height, spec.width), self.lab["grass"], dtype=np.int32)
        self.support: dict[tuple[int, int], tuple[int, ...]] = {}
        hw, vw = spec.road_widths
        self.r0 = (self.pr - hw) // 2 + spec.offset[1]
        self.c0 = (self.pc - vw) // 2 + spec.offset[0]
        self.hw, self.vw = hw, vw

    def check_band(self, lo: int, width: int, limit: int, what: str) -> None:
        if lo < 0 or lo + width > limit:
            raise ValidationError(f"{what} road does not fit in the scene; reduce the offset or road width")

    def road(self, cols: tuple[int, int], rows: tuple[int, int], direction: int) -> None:
        """Patch-aligned road block with a one-hot direction and 2-cell edge strips."""
        P = self.P
        x0, x1, y0, y1 = cols[0] * P, cols[1] * P, rows[0] * P, rows[1] * P
        self.cells[y0:y1, x0:x1] = self.lab["road"]
        if direction == E:
            strips = [(self.cells[y1 : y1 + 2, x0:x1], "sidewalk")]
        else:
            strips = [
                (self.cells[y0:y1, max(x0 - 2, 0) : x0], "building"),
                (self.cells[y0:y1, x1 : x1 + 2], "building"),
            ]
        for strip, region in strips:
            strip[strip == self.lab["grass"]] = self.lab[region]
        for c in range(*cols):
            for r in range(*rows):
                self.support.setdefault((c, r), (direction,))

    def landmark(self) -> None:
        """Asymmetric pond in the south-west quadrant."""
        s = self.spec
        x0, y0 = int(0.08 * s.width), int(0.08 * s.height)
        x1, y1 = x0 + max(3 * self.P // 2, 2), y0 + max(self.P, 2)
        block = self.cells[y0:y1, x0:x1]
        block[block == self.lab["grass"]] = self.lab["water"]

    def entry_rows(self) -> tuple[float, float]:
        return self.r0 * self.P + _MARGIN, (self.r0 + self.hw) * self.P - _MARGIN

    def entry_cols(self) -> tuple[float, float]:
        return self.c0 * self.P + _MARGIN, (self.c0 + self.vw) * self.P - _MARGIN


def _layout_corridor(cv: _Canvas) -> None:
    cv.check_band(cv.r0, cv.hw, cv.pr, "horizontal")
    cv.road((0, cv.pc), (cv.r0, cv.r0 + cv.hw), E)


def _junction(cv: _Canvas, cols: tuple[int, int], rows: tuple[int, int], last: int) -> None:
    """Turning block. Agents pick east or north only in its interior; the rim
    pushes them inward first so no straight run starts at a road edge."""
    if cols[1] - cols[0] < 3 or rows[1] - rows[0] < 3:
        raise ValidationError("junction layouts need road widths of at least 3 patches")
    for c in range(*cols):
        for r in range(*rows):
            if c == cols[0]:
                sup = (E,)
            elif c == cols[1] - 1:
                sup = (N,) if r == rows[0] else (last,)
            elif r in (rows[0], rows[1] - 1):
                sup = (N,)
            else:
                sup = (E, N)
            cv.support[(c, r)] = sup


def _layout_l(cv: _Canvas) -> None:
    cv.check_band(cv.r0, cv.hw, cv.pr, "horizontal")
    cv.check_band(cv.c0, cv.vw, cv.pc, "vertical")
    rows, cols = (cv.r0, cv.r0 + cv.hw), (cv.c0, cv.c0 + cv.vw)
    _junction(cv, cols, rows, N)
    cv.road((0, cols[1]), rows, E)
    cv.road(cols, (rows[0], cv.pr), N)


def _layout_crossroads(cv: _Canvas) -> None:
    cv.check_band(cv.r0, cv.hw, cv.pr, "horizontal")
    cv.check_band(cv.c0, cv.vw, cv.pc, "vertical")
    rows, cols = (cv.r0, cv.r0 + cv.hw), (cv.c0, cv.c0 + cv.vw)
    _junction(cv, cols, rows, E)
    cv.road((0, cv.pc), rows, E)
    cv.road(cols, (0, cv.pr), N)


def _nearest_bin(heading: float) -> int:
    return int(round((heading % (2 * math.pi)) / SECTOR)) % N_DIRECTIONS + 1


def _layout_roundabout(cv: _Canvas) -> None:
    s, P = cv.spec, cv.P
    cx = s.width / 2 + s.offset[0] * P
    cy = s.height / 2 + s.offset[1] * P
    r_out = 0.3 * min(s.width, s.height)
    r_in = r_out - cv.hw * P
    if r_in <= 0:
        raise ValidationError("roundabout ring is wider than its radius; reduce road_widths[0] or enlarge the scene")
    if cx - r_out < 0 or cx + r_out > s.width or cy - r_out < 0 or cy + r_out > s.height:
        raise ValidationError("roundabout does not fit in the scene; reduce the offset")
    ra = int(round(cy / P - cv.hw / 2))
    ca = int(round(cx / P - cv.hw / 2))
    cv.check_band(ra, cv.hw, cv.pr, "entry")
    cv.check_band(ca, cv.hw, cv.pc, "exit")
    cv.r0, cv.c0 = ra, ca

    ys, xs = np.mgrid[0 : s.height, 0 : s.width] + 0.5
    rad = np.hypot(xs - cx, ys - cy)
    ring = (rad >= r_in) & (rad <= r_out)
    west = (xs < cx) & (ys >= ra * P) & (ys < (ra + cv.hw) * P) & (rad >= r_in)
    north = (ys > cy) & (xs >= ca * P) & (xs < (ca + cv.hw) * P) & (rad >= r_in)
    side = (rad > r_out) & (rad <= r_out + 2)
    cv.cells[side] = cv.lab["sidewalk"]
    cv.cells[ring | west | north] = cv.lab["road"]

    r_mid, width = 0.5 * (r_in + r_out), r_out - r_in
    for c in range(cv.pc):
        for r in range(cv.pr):
            px, py = (c + 0.5) * P, (r + 0.5) * P
            rc = math.hypot(px - cx, py - cy)
            if ca <= c < ca + cv.hw and py > cy and rc >= r_in - P / 2:
                # the ring part of the exit arm keeps agents moving west
                # until they are clear of the arm's east edge
                on_ring = rc <= r_out + P / 2 and c == ca + cv.hw - 1
                cv.support[(c, r)] = (_nearest_bin(math.pi),) if on_ring else (N,)
            elif r_in - P / 2 <= rc <= r_out + P / 2:
                phi = math.atan2(py - cy, px - cx)
                pull = max(-0.5, min(0.5, (rc - r_mid) / width)) * (math.pi / 3)
                cv.support[(c, r)] = (_nearest_bin(phi + math.pi / 2 + pull),)
            elif ra <= r < ra + cv.hw and px < cx:
                cv.support[(c, r)] = (E,)


_BUILDERS = {
    "straight-corridor": _layout_corridor,
    "L-corridor": _layout_l,
    "crossroads": _layout_crossroads,
    "roundabout": _layout_roundabout,
}


# ------------------------------------------------------------ generation


def generator_stats(support: tuple[int, ...], spec: SynthSpec) -> PatchStats:
    hod = np.zeros(N_DIRECTIONS + 1)
    hod[list(support)] = 1.0 / len(support)
    fits = [SpeedFit(0.0, 0.0, 0)] * N_DIRECTIONS
    for d in support:
        fits[d - 1] = SpeedFit(spec.speed_mu, spec.speed_sigma, 100)
    return PatchStats(1.0, 0.0 if len(support) == 1 else 1.0, tuple(hod), tuple(fits))


def _paint(spec: SynthSpec):
    cv = _Canvas(spec)
    _BUILDERS[spec.layout](cv)
    cv.landmark()
    class_count = max(spec.labels.values()) + 1
    grid = SemanticGrid(cv.cells, class_count, spec.cell_size)
    pgrid = PatchGrid(spec.width, spec.height, spec.patch_size, spec.cell_size)
    stats = {key: generator_stats(sup, spec) for key, sup in sorted(cv.support.items())}
    gen = map_from_patch_stats(spec.class_id, pgrid, stats)
    return grid, gen, cv.entry_rows(), cv.entry_cols()


def build_layout(spec: SynthSpec) -> tuple[SemanticGrid, NavigationMap]:
    """Label grid and hand-authored generator map of ``spec``."""
    grid, gen, _, _ = _paint(spec)
    return grid, gen


def _start_states(spec: SynthSpec, rows: tuple[float, float], cols: tuple[float, float]) -> list[TargetState]:
    cs = spec.cell_size
    starts = []
    for i in range(spec.n_trajectories):
        u = derive_rng(spec.seed, "synth-start", i).random(3)
        from_south = spec.layout == "crossroads" and u[2] >= 0.5
        if from_south:
            x = (cols[0] + u[1] * (cols[1] - cols[0])) * cs
            starts.append(TargetState(x, 0.5 * u[0] * cs, spec.speed_mu, DIRECTION_ANGLES[N]))
        else:
            y = (rows[0] + u[1] * (rows[1] - rows[0])) * cs
            starts.append(TargetState(0.5 * u[0] * cs, y, spec.speed_mu, DIRECTION_ANGLES[E]))
    return starts


def generate_scene(spec: SynthSpec) -> SynthScene:
    """Paint the layout and sample ``spec.n_trajectories`` trajectories from its generator map.

    Trajectory ``i`` depends only on ``(spec, i)``.
    """
    grid, gen, rows, cols = _paint(spec)
    starts = _start_states(spec, rows, cols)
    cfg = PredictorConfig(sigma=spec.effective_noise, lam=1.0, t_max=spec.steps, alpha_cap=DEFAULT_ALPHA_CAP)
    if starts:
        u = np.stack([derive_rng(spec.seed, "synth-path", i).random((spec.steps, 4)) for i in range(len(starts))])
        paths = run_batch(starts, None, gen, cfg, u)
    else:
        paths = []
    trajectories = []
    for i, (x0, path) in enumerate(zip(starts, paths)):
        pts = path.with_start(x0)
        if len(pts) < 2:
            continue
        trajectories.append(Trajectory(f"a{i:04d}", spec.class_id, np.arange(len(pts)), pts))
    return SynthScene(spec, grid, trajectories, gen)
