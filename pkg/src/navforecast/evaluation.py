"""Modified Hausdorff distance and cross-validated benchmarking of predictors."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import zlib
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .dbn import PredictorConfig, TargetState, linear_baseline, predict
from .navmap import BuilderConfig, NavigationMap, build_map
from .scene import PatchGrid, Trajectory
from .utils import InsufficientDataError, ValidationError, atomic_write_text

REPORT_FORMAT = "navforecast.report"


def _as_points(a) -> np.ndarray:
    pts = np.asarray(a, dtype=float)
    if pts.ndim == 1 and pts.size == 2:
        pts = pts[None]
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected an (n, 2) point set, got shape {pts.shape}")
    if len(pts) == 0:
        raise ValueError("point sets must be nonempty")
    return pts


def mhd(a, b) -> float:
    """Modified Hausdorff distance: the larger of the two directed mean
    nearest-neighbour distances between point sets ``a`` and ``b``."""
    a, b = _as_points(a), _as_points(b)
    d = cdist(a, b)
    return float(max(d.min(axis=1).mean(), d.min(axis=0).mean()))


# ------------------------------------------------------------ folds


def dataset_hash(trajectories: Sequence[Trajectory]) -> str:
    h = hashlib.sha256()
    for t in sorted(trajectories, key=lambda t: (t.class_id, t.agent_id)):
        h.update(f"{t.class_id}\0{t.agent_id}\0".encode())
        h.update(np.ascontiguousarray(t.frames, dtype=np.int64).tobytes())
        h.update(np.ascontiguousarray(t.positions, dtype=np.float64).tobytes())
    return h.hexdigest()


def assign_folds(ids: Sequence[str], n_folds: int, key: str) -> dict[str, int]:
    """Balanced fold labels: ids are ranked by a keyed hash and dealt round-robin."""
    if n_folds < 2:
        raise ValidationError("at least 2 folds are needed")
    ranked = sorted(ids, key=lambda i: (hashlib.sha256(f"{key}\0{i}".encode()).hexdigest(), i))
    return {agent: k % n_folds for k, agent in enumerate(ranked)}


def trajectory_seed(seed: int, agent_id: str) -> int:
    """Per-trajectory sampling seed, independent of evaluation order."""
    ss = np.random.SeedSequence([seed, zlib.crc32(agent_id.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


# ------------------------------------------------------------ predictors


class Predictor(Protocol):
    label: str

    def fit(self, train: Sequence[Trajectory], grid: PatchGrid, class_id: str) -> None: ...

    def predict(self, traj: Trajectory) -> np.ndarray: ...


def initial_conditions(traj: Trajectory) -> tuple[TargetState, np.ndarray]:
    """Initial state (from the first two samples) and goal (the last sample)."""
    if len(traj) < 2:
        raise InsufficientDataError(f"trajectory {traj.agent_id!r} needs at least 2 samples")
    p = traj.positions
    x0 = TargetState.from_positions(p[0], p[1], float(traj.frames[1] - traj.frames[0]))
    return x0, p[-1]


class NavmapPredictor:
    """Navigation-map sampler. Builds a map on the training split unless a
    fixed ``navmap`` is supplied."""

    def __init__(
        self,
        config: PredictorConfig | None = None,
        builder: BuilderConfig | None = None,
        navmap: NavigationMap | None = None,
        label: str = "navmap",
    ):
        self.config = config or PredictorConfig()
        self.builder = builder or BuilderConfig()
        self.fixed = navmap
        self.navmap = navmap
        self.label = label

    def fit(self, train: Sequence[Trajectory], grid: PatchGrid, class_id: str) -> None:
        if self.fixed is None:
            self.navmap = build_map(train, grid, class_id, self.builder)

    def predict(self, traj: Trajectory) -> np.ndarray:
        if self.navmap is None:
            raise RuntimeError("predictor is not fitted")
        x0, goal = initial_conditions(traj)
        cfg = PredictorConfig(**{**self.config.__dict__, "seed": trajectory_seed(self.config.seed, traj.agent_id)})
        path = predict(x0, goal, self.navmap, cfg).selected
        return path.with_start(x0)


class LinearPredictor:
    """Constant-velocity baseline run for the ground-truth number of steps."""

    def __init__(self, label: str = "linear"):
        self.label = label
        self.grid: PatchGrid | None = None

    def fit(self, train: Sequence[Trajectory], grid: PatchGrid, class_id: str) -> None:
        self.grid = grid

    def predict(self, traj: Trajectory) -> np.ndarray:
        x0, goal = initial_conditions(traj)
        steps = int(traj.frames[-1] - traj.frames[0])
        return linear_baseline(x0, steps, self.grid, goal).with_start(x0)


class FunctionPredictor:
    """Wraps ``fn(trajectory) -> positions``; useful for oracles and tests."""

    def __init__(self, fn: Callable[[Trajectory], np.ndarray], label: str):
        self.fn, self.label = fn, label

    def fit(self, train, grid, class_id) -> None:
        pass

    def predict(self, traj: Trajectory) -> np.ndarray:
        return np.asarray(self.fn(traj), dtype=float)


def evaluate(predictor: Predictor, tests: Sequence[Trajectory]) -> np.ndarray:
    """MHD of ``predictor`` on each test trajectory, in input order."""
    return np.array([mhd(predictor.predict(t), t.positions) for t in tests])


# ------------------------------------------------------------ benchmark


@dataclass(frozen=True)
class BenchmarkProtocol:
    n_folds: int = 5
    seed: int = 0
    min_per_class: int = 5
    classes: tuple[str, ...] | None = None


@dataclass(frozen=True)
class EvalRecord:
    predictor: str
    class_id: str
    fold: int
    agent_id: str
    mhd: float


@dataclass
class EvalReport:
    predictors: list[str]
    records: list[EvalRecord]
    folds: dict[str, dict[str, int]]  # class -> agent -> fold
    n_folds: int
    seed: int
    dataset: str
    notes: list[str] = field(default_factory=list)

    def values(self, predictor: str, class_id: str | None = None) -> np.ndarray:
        return np.array(
            [r.mhd for r in self.records if r.predictor == predictor and class_id in (None, r.class_id)]
        )

    def fold_means(self, predictor: str, class_id: str | None = None) -> np.ndarray:
        out = []
        for k in range(self.n_folds):
            v = [r.mhd for r in self.records if r.predictor == predictor and r.fold == k and class_id in (None, r.class_id)]
            if v:
                out.append(float(np.mean(v)))
        return np.array(out)

    def summary(self) -> dict:
        """Per predictor and class: mean and std of the per-fold mean MHD."""
        classes = sorted(self.folds)
        out: dict = {}
        for name in self.predictors:
            entry = {}
            for c in classes + ["all"]:
                cid = None if c == "all" else c
                fm = self.fold_means(name, cid)
                if fm.size:
                    entry[c] = {
                        "mean": float(fm.mean()),
                        "std": float(fm.std()),
                        "n": int(self.values(name, cid).size),
                    }
            out[name] = entry
        return out

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "version": 1,
            "dataset": self.dataset,
            "n_folds": self.n_folds,
            "seed": self.seed,
            "predictors": list(self.predictors),
            "summary": self.summary(),
            "folds": {c: dict(sorted(f.items())) for c, f in sorted(self.folds.items())},
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=False) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["predictor", "class", "fold", "agent_id", "mhd"])
        for r in self.records:
            w.writerow([r.predictor, r.class_id, r.fold, r.agent_id, repr(r.mhd)])
        return buf.getvalue()

    def table(self) -> str:
        """Predictor x class matrix of ``mean ± std``."""
        summ = self.summary()
        cols = sorted(self.folds) + ["all"]
        rows = [["predictor"] + cols]
        for name in self.predictors:
            cells = [name]
            for c in cols:
                s = summ[name].get(c)
                cells.append("-" if s is None else f"{s['mean']:.2f} ± {s['std']:.2f}")
            rows.append(cells)
        widths = [max(len(r[i]) for r in rows) for i in range(len(cols) + 1)]
        return "\n".join("  ".join(c.ljust(wd) for c, wd in zip(r, widths)).rstrip() for r in rows) + "\n"

    def save(self, path: str | os.PathLike, csv_path: str | os.PathLike | None = None) -> None:
        atomic_write_text(path, self.to_json())
        if csv_path is not None:
            atomic_write_text(csv_path, self.to_csv())


def run_benchmark(
    trajectories: Sequence[Trajectory],
    grid: PatchGrid,
    predictors: Sequence[Predictor],
    protocol: BenchmarkProtocol | None = None,
) -> EvalReport:
    """K-fold cross validation with trajectories as the unit.

    Each fold fits every predictor on the other folds of the same class and
    scores each held-out trajectory by MHD against its ground truth. Classes
    with fewer than ``min_per_class`` usable trajectories are skipped with a note.
    """
    protocol = protocol or BenchmarkProtocol()
    labels = [p.label for p in predictors]
    if len(set(labels)) != len(labels):
        raise ValidationError("predictor labels must be unique")
    digest = dataset_hash(trajectories)
    notes: list[str] = []
    by_class: dict[str, list[Trajectory]] = {}
    for t in trajectories:
        by_class.setdefault(t.class_id, []).append(t)
    classes = sorted(by_class) if protocol.classes is None else list(protocol.classes)

    records: list[EvalRecord] = []
    folds: dict[str, dict[str, int]] = {}
    for cid in classes:
        group = by_class.get(cid, [])
        usable = [t for t in group if len(t) >= 2]
        if len(usable) < len(group):
            notes.append(f"class {cid}: {len(group) - len(usable)} trajectories shorter than 2 samples ignored")
        ids = [t.agent_id for t in usable]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"class {cid}: duplicate agent ids")
        if len(usable) < max(protocol.min_per_class, protocol.n_folds):
            notes.append(f"class {cid}: skipped, only {len(usable)} trajectories")
            continue
        assignment = assign_folds(ids, protocol.n_folds, f"{digest}:{protocol.seed}:{cid}")
        folds[cid] = assignment
        for k in range(protocol.n_folds):
            train = [t for t in usable if assignment[t.agent_id] != k]
            test = sorted((t for t in usable if assignment[t.agent_id] == k), key=lambda t: t.agent_id)
            for pred in predictors:
                pred.fit(train, grid, cid)
                for t, v in zip(test, evaluate(pred, test)):
                    records.append(EvalRecord(pred.label, cid, k, t.agent_id, float(v)))
    if not folds:
        notes.append("no class had enough trajectories")
    records.sort(key=lambda r: (r.class_id, r.fold, r.agent_id, labels.index(r.predictor)))
    return EvalReport(labels, records, folds, protocol.n_folds, protocol.seed, digest, notes)
