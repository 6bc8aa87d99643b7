"""Knowledge transfer between scenes through semantic context descriptors.

Each patch is described by

* a global vector ``g``: for every class, the distance from the patch
  centroid to the nearest cell of that class (the scene diagonal when the
  class is absent), and
* a local vector ``l``: class histograms of the patches at Chebyshev
  distance 0, 1 and 2 (in patch units), each L1-normalised, then averaged.

The matching key is ``w * g / |g|_1 + (1 - w) * l``. A query patch receives
the averaged statistics of its ``K`` nearest training patches.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy import ndimage

from .navmap import N_DIRECTIONS, NavigationMap
from .scene import PatchGrid, SemanticGrid
from .utils import ValidationError, atomic_write_text

INDEX_FORMAT = "navforecast.index"
DEFAULT_K = 50
DEFAULT_W = 0.5
SHELLS = (0, 1, 2)


@dataclass(frozen=True)
class ContextDescriptor:
    """Normalised global and local context of one patch."""

    g: np.ndarray
    l: np.ndarray
    w: float = DEFAULT_W

    @property
    def p(self) -> np.ndarray:
        return self.w * self.g + (1.0 - self.w) * self.l


def _l1(v: np.ndarray) -> np.ndarray:
    s = v.sum(axis=-1, keepdims=True)
    return np.divide(v, s, out=np.zeros_like(v, dtype=float), where=s > 0)


# ------------------------------------------------------------ descriptors

def _closed_cover(mask: np.ndarray, axis: int, step: int) -> np.ndarray:
    """Lattice points along ``axis`` (spacing ``1/step`` cells) covered by a closed masked cell."""
    m = np.moveaxis(mask, axis, 0)
    pad = np.zeros((1,) + m.shape[1:], dtype=bool)
    before = np.concatenate([pad, m])  # cell k - 1 at lattice point k
    after = np.concatenate([m, pad])  # cell k
    corner = before | after
    if step == 1:
        out = corner
    else:
        out = np.zeros((2 * m.shape[0] + 1,) + m.shape[1:], dtype=bool)
        out[0::2] = corner
        out[1::2] = m
    return np.moveaxis(out, 0, axis)


def global_context_all(grid: SemanticGrid, patches: PatchGrid) -> np.ndarray:
    """Raw global context for every patch, shape ``(P, C)``, world units.

    Distances are measured from the patch centroid to the nearest point of
    a cell of each class. Centroids sit on the integer or half-integer cell
    lattice, and the nearest point of a union of closed cells to a lattice
    point is itself a lattice point, so an exact distance transform over
    the lattice points covered by each class gives the answer.
    """
    h, w = grid.height, grid.width
    ps = patches.patch_size
    cols = np.arange(patches.patch_cols)
    rows = np.arange(patches.patch_rows)
    cx = 0.5 * (cols * ps + np.minimum((cols + 1) * ps, w))  # cell units
    cy = 0.5 * (rows * ps + np.minimum((rows + 1) * ps, h))
    sx = 1 if np.all(cx == np.floor(cx)) else 2
    sy = 1 if np.all(cy == np.floor(cy)) else 2
    ix = np.rint(cx * sx).astype(np.int64)
    iy = np.rint(cy * sy).astype(np.int64)
    IX, IY = np.meshgrid(ix, iy)
    IX, IY = IX.ravel(), IY.ravel()

    out = np.full((patches.num_patches, grid.class_count), grid.diagonal)
    labels = grid.labels
    for c in range(grid.class_count):
        mask = labels == c
        if not mask.any():
            continue
        cover = _closed_cover(_closed_cover(mask, 1, sx), 0, sy)
        dist = ndimage.distance_transform_edt(~cover, sampling=(1.0 / sy, 1.0 / sx))
        out[:, c] = dist[IY, IX] * grid.cell_size
    return out


def global_context(grid: SemanticGrid, patch: tuple[int, int], patch_size: int) -> np.ndarray:
    """Distance (world units) from the patch centroid to the nearest cell of each class."""
    pg = grid.patch_grid(patch_size)
    return global_context_all(grid, pg)[pg.flat_index(patch)]


def patch_histograms(grid: SemanticGrid, patches: PatchGrid) -> np.ndarray:
    """Per-patch class cell counts, shape ``(patch_rows, patch_cols, C)``."""
    ps = patches.patch_size
    rr, cc = np.indices(grid.labels.shape)
    pidx = (rr // ps) * patches.patch_cols + (cc // ps)
    counts = np.bincount(
        (pidx * grid.class_count + grid.labels).ravel(), minlength=patches.num_patches * grid.class_count
    )
    return counts.reshape(patches.patch_rows, patches.patch_cols, grid.class_count).astype(float)


def _box_sum(hist: np.ndarray, radius: int) -> np.ndarray:
    """Sum of ``hist`` over the ``(2r+1)^2`` window around every patch (zero padded)."""
    if radius == 0:
        return hist.copy()
    pr, pc = hist.shape[:2]
    k = 2 * radius + 1
    padded = np.pad(hist, ((radius, radius), (radius, radius), (0, 0)))
    cs = np.zeros((pr + k, pc + k, hist.shape[2]))
    cs[1:, 1:] = padded.cumsum(axis=0).cumsum(axis=1)
    return cs[k : k + pr, k : k + pc] - cs[0:pr, k : k + pc] - cs[k : k + pr, 0:pc] + cs[0:pr, 0:pc]


def local_context_all(grid: SemanticGrid, patches: PatchGrid) -> np.ndarray:
    """Local context for every patch, shape ``(P, C)``; rows sum to 1."""
    hist = patch_histograms(grid, patches)
    boxes = [_box_sum(hist, r) for r in SHELLS]
    shells = [boxes[0]] + [boxes[i] - boxes[i - 1] for i in range(1, len(boxes))]
    total = np.zeros(hist.shape)
    used = np.zeros(hist.shape[:2])
    for s in shells:
        n = s.sum(axis=2, keepdims=True)
        nonempty = n[..., 0] > 0
        total += np.divide(s, n, out=np.zeros_like(s), where=n > 0)
        used += nonempty
    l = total / np.maximum(used, 1)[..., None]
    return l.reshape(-1, grid.class_count)


def local_context(grid: SemanticGrid, patch: tuple[int, int], patch_size: int) -> np.ndarray:
    pg = grid.patch_grid(patch_size)
    return local_context_all(grid, pg)[pg.flat_index(patch)]


def shell_histograms(grid: SemanticGrid, patch: tuple[int, int], patch_size: int) -> list[np.ndarray]:
    """Unnormalised class counts of each shell around ``patch`` (for inspection)."""
    pg = grid.patch_grid(patch_size)
    hist = patch_histograms(grid, pg)
    col, row = patch
    out = []
    for s in SHELLS:
        acc = np.zeros(grid.class_count)
        for r in range(row - s, row + s + 1):
            for c in range(col - s, col + s + 1):
                if max(abs(r - row), abs(c - col)) == s and 0 <= r < pg.patch_rows and 0 <= c < pg.patch_cols:
                    acc += hist[r, c]
        out.append(acc)
    return out


def scene_descriptors(grid: SemanticGrid, patch_size: int) -> tuple[np.ndarray, np.ndarray]:
    """L1-normalised ``(g, l)`` for every patch of a scene."""
    pg = grid.patch_grid(patch_size)
    return _l1(global_context_all(grid, pg)), local_context_all(grid, pg)


def describe_patch(grid: SemanticGrid, patch: tuple[int, int], patch_size: int, w: float = DEFAULT_W) -> ContextDescriptor:
    pg = grid.patch_grid(patch_size)
    g, l = scene_descriptors(grid, patch_size)
    i = pg.flat_index(patch)
    return ContextDescriptor(g[i], l[i], w)


# ------------------------------------------------------------ nearest neighbours

def knn_bruteforce(queries: np.ndarray, entries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Reference linear scan: per query, the ``k`` entries closest in L2, ties by entry order."""
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    e = np.asarray(entries, dtype=float)
    k = min(k, len(e))
    idx = np.empty((len(q), k), dtype=np.int64)
    dist = np.empty((len(q), k))
    order_key = np.arange(len(e))
    for i, row in enumerate(q):
        d2 = ((e - row) ** 2).sum(axis=1)
        order = np.lexsort((order_key, d2))[:k]
        idx[i] = order
        dist[i] = np.sqrt(d2[order])
    return idx, dist


def _rank_exact(q: np.ndarray, e: np.ndarray, cand: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    d2 = ((e[cand] - q) ** 2).sum(axis=1)
    order = np.lexsort((cand, d2))[:k]
    return cand[order], np.sqrt(d2[order])


def knn(queries: np.ndarray, entries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact k nearest neighbours, identical to :func:`knn_bruteforce`.

    A k-d tree proposes the k+1 nearest entries. When the (k+1)-th is clearly
    farther than the k-th, the first k form the answer and are re-ranked with
    the linear-scan formula; otherwise every entry within rounding distance of
    the k-th is gathered and ranked the same way.
    """
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    e = np.asarray(entries, dtype=float)
    if len(e) == 0:
        raise ValidationError("cannot search an empty index")
    k = min(k, len(e))
    nq = len(q)
    if k == len(e):
        cand = np.broadcast_to(np.arange(k), (nq, k))
        clear = np.ones(nq, dtype=bool)
        kth = np.zeros(nq)
        tree = None
    else:
        tree = cKDTree(e)
        d, i = tree.query(q, k=k + 1)
        d, i = d.reshape(nq, k + 1), i.reshape(nq, k + 1)
        kth = d[:, k - 1]
        clear = d[:, k] > kth * (1.0 + 1e-9) + 1e-12
        cand = i[:, :k]
    cand = np.sort(cand, axis=1)
    d2 = ((e[cand] - q[:, None, :]) ** 2).sum(axis=-1)
    order = np.argsort(d2, axis=1, kind="stable")
    idx = np.take_along_axis(cand, order, axis=1)
    dist = np.sqrt(np.take_along_axis(d2, order, axis=1))
    for j in np.flatnonzero(~clear):
        ball = np.array(sorted(tree.query_ball_point(q[j], kth[j] * (1.0 + 1e-9) + 1e-12)), dtype=np.int64)
        idx[j], dist[j] = _rank_exact(q[j], e, ball, k)
    return idx, dist


# ------------------------------------------------------------ index

@dataclass(eq=False)
class DescriptorIndex:
    """Observed training patches with their descriptors and statistics.

    Entries are ordered by ``(scene_id, patch index)``; that order breaks
    distance ties.
    """

    class_id: str
    class_count: int
    patch_size: int
    scene_ids: list[str]
    patches: np.ndarray
    g: np.ndarray
    l: np.ndarray
    rho: np.ndarray
    xi: np.ndarray
    hod: np.ndarray
    speed_mu: np.ndarray
    speed_sigma: np.ndarray
    speed_n: np.ndarray
    visit_counts: np.ndarray
    w: float = DEFAULT_W
    k: int = DEFAULT_K
    sigma_floor: float = 1e-3
    sources: dict[str, SemanticGrid] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.scene_ids)

    def keys(self, w: float | None = None) -> np.ndarray:
        w = self.w if w is None else w
        return w * self.g + (1.0 - w) * self.l

    def to_dict(self) -> dict:
        entries = []
        for i in range(len(self)):
            entries.append(
                {
                    "scene": self.scene_ids[i],
                    "patch": int(self.patches[i]),
                    "g": [float(v) for v in self.g[i]],
                    "l": [float(v) for v in self.l[i]],
                    "rho": float(self.rho[i]),
                    "xi": float(self.xi[i]),
                    "hod": [float(v) for v in self.hod[i]],
                    "hos": [
                        {"mu": float(m), "sigma": float(s), "n": int(n)}
                        for m, s, n in zip(self.speed_mu[i], self.speed_sigma[i], self.speed_n[i])
                    ],
                    "visit_count": int(self.visit_counts[i]),
                }
            )
        scenes = {
            sid: {
                "width": sg.width,
                "height": sg.height,
                "class_count": sg.class_count,
                "cell_size": sg.cell_size,
                "labels": [" ".join(str(int(v)) for v in row) for row in sg.labels],
            }
            for sid, sg in sorted(self.sources.items())
        }
        return {
            "format": INDEX_FORMAT,
            "version": 1,
            "class": self.class_id,
            "class_count": self.class_count,
            "patch_size": self.patch_size,
            "w": self.w,
            "k": self.k,
            "sigma_floor": self.sigma_floor,
            "entries": entries,
            "scenes": scenes,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":")) + "\n"

    def save(self, path: str | os.PathLike) -> None:
        atomic_write_text(path, self.to_json())

    @classmethod
    def from_dict(cls, doc: dict, source: str = "<index>") -> DescriptorIndex:
        if doc.get("format") != INDEX_FORMAT:
            raise ValidationError(f"{source}: not a descriptor index (format {doc.get('format')!r})")
        try:
            c = int(doc["class_count"])
            entries = doc["entries"]
            n = len(entries)
            arr = {
                "g": np.zeros((n, c)),
                "l": np.zeros((n, c)),
                "rho": np.zeros(n),
                "xi": np.zeros(n),
                "hod": np.zeros((n, N_DIRECTIONS + 1)),
                "speed_mu": np.zeros((n, N_DIRECTIONS)),
                "speed_sigma": np.zeros((n, N_DIRECTIONS)),
                "speed_n": np.zeros((n, N_DIRECTIONS), dtype=np.int64),
                "visit_counts": np.zeros(n, dtype=np.int64),
            }
            scene_ids, patches = [], np.zeros(n, dtype=np.int64)
            for i, e in enumerate(entries):
                if len(e["g"]) != c or len(e["l"]) != c:
                    raise ValidationError(f"{source}: entries[{i}]: descriptor length differs from class_count {c}")
                scene_ids.append(str(e["scene"]))
                patches[i] = int(e["patch"])
                arr["g"][i] = e["g"]
                arr["l"][i] = e["l"]
                arr["rho"][i] = float(e["rho"])
                arr["xi"][i] = float(e["xi"])
                arr["hod"][i] = e["hod"]
                arr["speed_mu"][i] = [h["mu"] for h in e["hos"]]
                arr["speed_sigma"][i] = [h["sigma"] for h in e["hos"]]
                arr["speed_n"][i] = [h["n"] for h in e["hos"]]
                arr["visit_counts"][i] = int(e["visit_count"])
            sources = {}
            for sid, sd in doc.get("scenes", {}).items():
                labels = np.array([[int(v) for v in row.split()] for row in sd["labels"]], dtype=np.int64)
                sources[sid] = SemanticGrid(labels.reshape(int(sd["height"]), int(sd["width"])), int(sd["class_count"]), float(sd["cell_size"]))
            return cls(
                str(doc["class"]),
                c,
                int(doc["patch_size"]),
                scene_ids,
                patches,
                w=float(doc["w"]),
                k=int(doc["k"]),
                sigma_floor=float(doc.get("sigma_floor", 1e-3)),
                sources=sources,
                **arr,
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"{source}: malformed descriptor index ({exc!r})") from None

    @classmethod
    def load(cls, path: str | os.PathLike) -> DescriptorIndex:
        path = str(path)
        with open(path, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
        return cls.from_dict(doc, path)


def build_index(
    scenes: Sequence[tuple],
    w: float = DEFAULT_W,
    k: int = DEFAULT_K,
    keep_labels: bool = True,
) -> DescriptorIndex:
    """Index every observed patch of the training scenes.

    ``scenes`` holds ``(grid, navmap)`` or ``(scene_id, grid, navmap)`` tuples;
    unnamed scenes are called ``scene000``, ``scene001``, ...
    """
    if not scenes:
        raise ValidationError("cannot build an index from no scenes")
    if not 0.0 <= w <= 1.0:
        raise ValidationError(f"w must lie in [0, 1], got {w}")
    named = []
    for i, item in enumerate(scenes):
        if len(item) == 2:
            named.append((f"scene{i:03d}", item[0], item[1]))
        else:
            named.append((str(item[0]), item[1], item[2]))
    ids = [n[0] for n in named]
    if len(set(ids)) != len(ids):
        raise ValidationError("scene ids must be unique")
    named.sort(key=lambda t: t[0])

    first_map = named[0][2]
    class_id, patch_size = first_map.class_id, first_map.grid.patch_size
    class_count = named[0][1].class_count
    sigma_floor = float(first_map.config.get("sigma_floor", 1e-3))
    parts: dict[str, list] = {key: [] for key in ("sid", "patch", "g", "l", "rho", "xi", "hod", "mu", "sd", "n", "v")}
    sources = {}
    for sid, grid, navmap in named:
        if navmap.class_id != class_id:
            raise ValidationError(f"scene {sid!r}: map class {navmap.class_id!r} differs from {class_id!r}")
        if navmap.grid.patch_size != patch_size:
            raise ValidationError(f"scene {sid!r}: patch size {navmap.grid.patch_size} differs from {patch_size}")
        if grid.class_count != class_count:
            raise ValidationError(f"scene {sid!r}: {grid.class_count} classes, expected {class_count}")
        if (navmap.grid.width, navmap.grid.height) != (grid.width, grid.height):
            raise ValidationError(f"scene {sid!r}: map and label grid sizes differ")
        g, l = scene_descriptors(grid, patch_size)
        obs = np.flatnonzero(navmap.observed)
        parts["sid"].extend([sid] * len(obs))
        parts["patch"].append(obs)
        parts["g"].append(g[obs])
        parts["l"].append(l[obs])
        parts["rho"].append(navmap.rho[obs])
        parts["xi"].append(navmap.xi[obs])
        parts["hod"].append(navmap.hod[obs])
        parts["mu"].append(navmap.speed_mu[obs])
        parts["sd"].append(navmap.speed_sigma[obs])
        parts["n"].append(navmap.speed_n[obs])
        parts["v"].append(navmap.visit_counts[obs])
        if keep_labels:
            sources[sid] = grid
    if not parts["sid"]:
        raise ValidationError("training scenes contain no observed patches")
    return DescriptorIndex(
        class_id,
        class_count,
        patch_size,
        parts["sid"],
        np.concatenate(parts["patch"]),
        np.concatenate(parts["g"]),
        np.concatenate(parts["l"]),
        np.concatenate(parts["rho"]),
        np.concatenate(parts["xi"]),
        np.concatenate(parts["hod"]),
        np.concatenate(parts["mu"]),
        np.concatenate(parts["sd"]),
        np.concatenate(parts["n"]),
        np.concatenate(parts["v"]),
        w=w,
        k=k,
        sigma_floor=sigma_floor,
        sources=sources,
    )


# ------------------------------------------------------------ transfer

@dataclass(eq=False)
class TransferResult:
    navmap: NavigationMap
    neighbors: np.ndarray
    distances: np.ndarray


def query_neighbors(
    query: SemanticGrid, index: DescriptorIndex, k: int | None = None, w: float | None = None
) -> tuple[PatchGrid, np.ndarray, np.ndarray]:
    if query.class_count != index.class_count:
        raise ValidationError(f"query has {query.class_count} classes, index has {index.class_count}")
    k = index.k if k is None else k
    if k < 1:
        raise ValidationError("K must be at least 1")
    w = index.w if w is None else w
    pg = query.patch_grid(index.patch_size)
    g, l = scene_descriptors(query, index.patch_size)
    nb, dist = knn(w * g + (1.0 - w) * l, index.keys(w), k)
    return pg, nb, dist


def pool_speeds(
    mu: np.ndarray, sigma: np.ndarray, n: np.ndarray, sigma_floor: float = 1e-3
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Count-weighted pooling of ``(mean, std, count)`` summaries along axis 1.

    Inputs have shape ``(P, K, D)``; the pooled variance is the weighted
    within-group variance plus the spread of the group means.
    """
    n_tot = n.sum(axis=1)
    wts = np.divide(n, n_tot[:, None, :], out=np.zeros(n.shape), where=n_tot[:, None, :] > 0)
    mean = (wts * mu).sum(axis=1)
    var = (wts * (sigma**2 + (mu - mean[:, None, :]) ** 2)).sum(axis=1)
    has = n_tot > 0
    sd = np.where(has, np.maximum(np.sqrt(var), sigma_floor), 0.0)
    return np.where(has, mean, 0.0), sd, n_tot


def transfer(
    query: SemanticGrid, index: DescriptorIndex, k: int | None = None, w: float | None = None
) -> TransferResult:
    """Transfer statistics to every patch of ``query`` from its K nearest entries."""
    pg, nb, dist = query_neighbors(query, index, k, w)
    rho = index.rho[nb].mean(axis=1)
    xi = index.xi[nb].mean(axis=1)
    hod = index.hod[nb].mean(axis=1)
    hod = hod / hod.sum(axis=1, keepdims=True)
    mu, sd, n = pool_speeds(index.speed_mu[nb], index.speed_sigma[nb], index.speed_n[nb], index.sigma_floor)
    visits = np.maximum(np.rint(index.visit_counts[nb].mean(axis=1)).astype(np.int64), 1)
    navmap = NavigationMap(
        index.class_id,
        pg,
        rho=rho,
        xi=xi,
        hod=hod,
        speed_mu=mu,
        speed_sigma=sd,
        speed_n=n,
        visit_counts=visits,
        observed=np.ones(pg.num_patches, dtype=bool),
        config={"transfer": {"k": int(nb.shape[1]), "w": index.w if w is None else w}},
    )
    return TransferResult(navmap, nb, dist)


def transfer_map(query: SemanticGrid, index: DescriptorIndex, k: int | None = None, w: float | None = None) -> NavigationMap:
    """Navigation map for an unseen scene built from its nearest training patches."""
    return transfer(query, index, k, w).navmap


def format_transfer_report(result: TransferResult, index: DescriptorIndex) -> str:
    """CSV with one row per (query patch, neighbour rank)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["query_patch", "col", "row", "rank", "scene_id", "source_patch", "distance"])
    pg = result.navmap.grid
    for q in range(len(result.neighbors)):
        col, row = pg.patch_of(q)
        for rank, (e, d) in enumerate(zip(result.neighbors[q], result.distances[q])):
            writer.writerow([q, col, row, rank, index.scene_ids[e], int(index.patches[e]), repr(float(d))])
    return buf.getvalue()


def hallucinate(query: SemanticGrid, index: DescriptorIndex, k: int = 1, w: float | None = None) -> SemanticGrid:
    """Rebuild ``query`` from the label content of its nearest training patches.

    With ``k > 1`` every cell takes the most frequent label among the
    neighbours (ties go to the smaller label). Diagnostic output only.
    """
    if not index.sources:
        raise ValidationError("index holds no source label grids; rebuild it with keep_labels=True")
    pg, nb, _ = query_neighbors(query, index, k, w)
    ps = pg.patch_size
    c = query.class_count
    out = np.zeros((query.height, query.width), dtype=np.int64)
    blocks_cache: dict[tuple[str, int], np.ndarray] = {}

    def block(entry: int) -> np.ndarray:
        key = (index.scene_ids[entry], int(index.patches[entry]))
        if key not in blocks_cache:
            src = index.sources[key[0]]
            spg = src.patch_grid(ps)
            c0, c1, r0, r1 = spg.cell_bounds(spg.patch_of(key[1]))
            b = src.labels[r0:r1, c0:c1]
            blocks_cache[key] = np.pad(b, ((0, ps - b.shape[0]), (0, ps - b.shape[1])), mode="edge")
        return blocks_cache[key]

    for q in range(pg.num_patches):
        stack = np.stack([block(e) for e in nb[q]])
        if len(stack) == 1:
            patch_labels = stack[0]
        else:
            counts = np.stack([(stack == cls).sum(axis=0) for cls in range(c)])
            patch_labels = counts.argmax(axis=0)
        c0, c1, r0, r1 = pg.cell_bounds(pg.patch_of(q))
        out[r0:r1, c0:c1] = patch_labels[: r1 - r0, : c1 - c0]
    return SemanticGrid(out, c, query.cell_size)
