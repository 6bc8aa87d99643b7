import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from conftest import one_direction_stats
from navforecast.navmap import PatchStats, map_from_patch_stats
from navforecast.scene import PatchGrid, SemanticGrid
from navforecast.transfer import (
    DescriptorIndex,
    build_index,
    format_transfer_report,
    global_context,
    global_context_all,
    hallucinate,
    knn,
    knn_bruteforce,
    local_context,
    pool_speeds,
    scene_descriptors,
    shell_histograms,
    transfer,
    transfer_map,
)
from navforecast.utils import ValidationError


def random_grid(seed, shape=(48, 64), classes=4):
    rng = np.random.default_rng(seed)
    # blocky labels so patches differ but are not pure noise
    coarse = rng.integers(0, classes, (shape[0] // 4, shape[1] // 4))
    labels = np.kron(coarse, np.ones((4, 4), dtype=int))
    return SemanticGrid(labels, classes)


def full_map(grid, patch_size, stats_for=lambda i: one_direction_stats(1 + i % 8)):
    pg = grid.patch_grid(patch_size)
    return map_from_patch_stats("p", pg, {i: stats_for(i) for i in range(pg.num_patches)})


def brute_global(grid, patch_size):
    pg = grid.patch_grid(patch_size)
    rr, cc = np.indices(grid.labels.shape)
    out = np.full((pg.num_patches, grid.class_count), grid.diagonal)
    for i in range(pg.num_patches):
        cx, cy = np.array(pg.centroid(pg.patch_of(i))) / grid.cell_size
        dx = np.maximum(np.abs(cx - (cc + 0.5)) - 0.5, 0.0)
        dy = np.maximum(np.abs(cy - (rr + 0.5)) - 0.5, 0.0)
        d = np.hypot(dx, dy)
        for c in range(grid.class_count):
            mask = grid.labels == c
            if mask.any():
                out[i, c] = d[mask].min() * grid.cell_size
    return out


# ---- descriptors


def test_centroid_inside_region_has_zero_distance():
    labels = np.zeros((32, 32), dtype=int)
    labels[:, 16:] = 1
    g = global_context(SemanticGrid(labels, 2), (0, 0), 16)
    assert g[0] == 0.0
    assert g[1] == pytest.approx(8.0)


def test_single_class_grid_uses_sentinel():
    grid = SemanticGrid(np.zeros((20, 30), dtype=int), 3, cell_size=0.5)
    g = global_context(grid, (1, 0), 10)
    assert g[0] == 0.0
    assert g[1] == g[2] == pytest.approx(math.hypot(10, 15))


def test_distance_to_grass_seven_cells():
    labels = np.ones((40, 40), dtype=int)
    labels[:, 31:] = 0  # grass
    pg_centroid_x = 24.0  # patch (1, 1) with size 16 spans 16..32
    g = global_context(SemanticGrid(labels, 2), (1, 1), 16)
    assert g[0] == pytest.approx(31 - pg_centroid_x, abs=1.0)


@given(
    hnp.arrays(np.int64, st.tuples(st.integers(3, 30), st.integers(3, 30)), elements=st.integers(0, 3)),
    st.integers(1, 12),
    st.sampled_from([1.0, 0.5]),
)
def test_global_context_matches_brute_force(labels, ps, cs):
    grid = SemanticGrid(labels, 4, cs)
    fast = global_context_all(grid, grid.patch_grid(ps))
    assert np.allclose(fast, brute_global(grid, ps), atol=1e-12)


def test_uniform_grid_local_context_is_one_hot():
    grid = SemanticGrid(np.full((64, 64), 2), 3)
    assert local_context(grid, (1, 2), 16).tolist() == [0.0, 0.0, 1.0]


def test_shell_zero_is_own_histogram():
    grid = random_grid(3)
    h = shell_histograms(grid, (2, 1), 8)[0]
    block = grid.labels[8:16, 16:24]
    assert h.tolist() == np.bincount(block.ravel(), minlength=4).tolist()


def test_checkerboard_shell_one():
    coarse = np.indices((5, 5)).sum(axis=0) % 2
    grid = SemanticGrid(np.kron(coarse, np.ones((4, 4), dtype=int)), 2)
    shells = shell_histograms(grid, (2, 2), 4)
    own = coarse[2, 2]
    # four edge neighbours have the other class, four corners the same
    assert shells[1][own] == 4 * 16 and shells[1][1 - own] == 4 * 16
    l = local_context(grid, (2, 2), 4)
    assert l[own] == pytest.approx((1 + 0.5 + 0.5) / 3)


@given(st.integers(0, 10_000), st.integers(2, 16))
def test_descriptors_are_normalised(seed, ps):
    grid = random_grid(seed, shape=(24, 36), classes=3)
    g, l = scene_descriptors(grid, ps)
    assert np.allclose(l.sum(axis=1), 1.0)
    # g is all zero only when the centroid touches every class
    sums = g.sum(axis=1)
    assert np.all(np.isclose(sums, 1.0) | (sums == 0.0))
    assert np.all(g >= 0) and np.all(l >= 0)


# ---- nearest neighbours


@given(st.integers(0, 10_000), st.integers(1, 12))
def test_knn_matches_brute_force(seed, k):
    rng = np.random.default_rng(seed)
    entries = rng.integers(0, 4, (40, 3)).astype(float) / 4  # many exact ties
    queries = np.vstack([entries[:5], rng.random((5, 3))])
    i1, d1 = knn(queries, entries, k)
    i2, d2 = knn_bruteforce(queries, entries, k)
    assert np.array_equal(i1, i2)
    assert np.array_equal(d1, d2)


def test_knn_k_larger_than_index():
    e = np.arange(6.0).reshape(3, 2)
    idx, dist = knn(np.array([[0.0, 0.0]]), e, 10)
    assert idx.tolist() == [[0, 1, 2]]


def test_knn_empty_index():
    with pytest.raises(ValidationError):
        knn(np.zeros((1, 2)), np.zeros((0, 2)), 1)


# ---- index


def test_index_counts_observed_patches():
    grid = random_grid(1)
    pg = grid.patch_grid(16)
    m = map_from_patch_stats("p", pg, {i: one_direction_stats(1) for i in range(5)})
    index = build_index([("s", grid, m)])
    assert len(index) == 5
    assert index.patches.tolist() == [0, 1, 2, 3, 4]


def test_duplicate_scene_entries_coincide():
    grid = random_grid(2)
    m = full_map(grid, 16)
    index = build_index([("a", grid, m), ("b", grid, m)])
    n = len(index) // 2
    assert np.array_equal(index.keys()[:n], index.keys()[n:])
    idx, dist = knn(index.keys()[n:], index.keys(), 2)
    assert np.all(dist == 0.0)
    # ties resolve to the earlier scene
    assert np.array_equal(idx[:, 0], np.arange(n))


def test_w_one_ignores_local_context():
    grid = random_grid(4, shape=(64, 64), classes=3)
    ps = 16
    m = full_map(grid, ps)
    index = build_index([("a", grid, m)], w=1.0)
    # permute labels inside every patch: local histograms keep their content only
    # through shell counts, global distances change little; w=1 rankings use g only
    g, _ = scene_descriptors(grid, ps)
    idx_g, _ = knn_bruteforce(g, index.g, 3)
    idx, _ = knn(g, index.keys(), 3)
    assert np.array_equal(idx, idx_g)
    _, l = scene_descriptors(grid, ps)
    assert np.array_equal(index.keys(0.0), index.l)
    assert not np.array_equal(index.keys(0.0), index.keys(1.0))


def test_index_round_trip(tmp_path):
    grid = random_grid(5)
    index = build_index([("a", grid, full_map(grid, 16))], w=0.3, k=7)
    index.save(tmp_path / "i.json")
    again = DescriptorIndex.load(tmp_path / "i.json")
    assert again.to_json() == (tmp_path / "i.json").read_text()
    assert (again.w, again.k, len(again)) == (0.3, 7, len(index))
    assert np.array_equal(again.keys(), index.keys())


def test_index_validation():
    grid = random_grid(6)
    with pytest.raises(ValidationError):
        build_index([])
    with pytest.raises(ValidationError):
        build_index([("a", grid, full_map(grid, 16))], w=1.5)
    with pytest.raises(ValidationError):
        build_index([("a", grid, full_map(grid, 16)), ("a", grid, full_map(grid, 16))])


# ---- transfer


def test_identity_with_k1():
    grid = random_grid(7)
    m = full_map(grid, 8)
    index = build_index([("a", grid, m)])
    out = transfer_map(grid, index, k=1)
    for name in ("rho", "xi", "hod", "speed_mu", "speed_sigma", "speed_n"):
        assert np.array_equal(getattr(out, name), getattr(m, name))


def test_k_equal_to_index_with_identical_stats():
    grid = random_grid(8)
    st_ = PatchStats(0.7, 0.3, one_direction_stats(2).hod, one_direction_stats(2).hos)
    m = full_map(grid, 16, lambda i: st_)
    index = build_index([("a", grid, m)])
    out = transfer_map(random_grid(9), index, k=len(index))
    assert np.allclose(out.rho, 0.7) and np.allclose(out.xi, 0.3)
    assert np.allclose(out.hod[:, 2], 1.0)
    assert np.allclose(out.speed_mu[:, 1], 1.0)
    # K beyond the index size uses every entry
    assert np.array_equal(transfer_map(random_grid(9), index, k=10 * len(index)).rho, out.rho)


def test_mean_of_two_neighbours():
    grid = SemanticGrid(np.kron(np.array([[0, 1]]), np.ones((8, 8), dtype=int)), 2)
    pg = grid.patch_grid(8)
    base = one_direction_stats(1)
    stats = {0: PatchStats(0.2, 0.0, base.hod, base.hos), 1: PatchStats(0.6, 0.0, base.hod, base.hos)}
    index = build_index([("a", grid, map_from_patch_stats("p", pg, stats))])
    out = transfer_map(grid, index, k=2)
    assert np.allclose(out.rho, 0.4)


def test_speed_pooling_is_count_weighted():
    mu = np.array([[[1.0], [2.0]]])
    sd = np.array([[[0.1], [0.2]]])
    n = np.array([[[1], [3]]])
    m, s, tot = pool_speeds(mu, sd, n)
    assert m[0, 0] == pytest.approx(1.75)
    var = (1 * (0.01 + 0.75**2) + 3 * (0.04 + 0.25**2)) / 4
    assert s[0, 0] == pytest.approx(math.sqrt(var))
    assert tot[0, 0] == 4


def test_transfer_report_and_class_mismatch():
    grid = random_grid(10)
    index = build_index([("a", grid, full_map(grid, 16))])
    res = transfer(grid, index, k=2)
    lines = format_transfer_report(res, index).splitlines()
    assert lines[0] == "query_patch,col,row,rank,scene_id,source_patch,distance"
    assert len(lines) == 1 + 2 * res.navmap.num_patches
    with pytest.raises(ValidationError):
        transfer(SemanticGrid(grid.labels, 5), index)


def test_hallucinate_identity():
    grid = random_grid(11)
    index = build_index([("a", grid, full_map(grid, 8))])
    assert hallucinate(grid, index, k=1) == grid
