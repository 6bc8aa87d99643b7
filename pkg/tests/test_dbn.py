import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from conftest import FLOOR, one_direction_stats, uniform_map
from navforecast.dbn import (
    PATHS_HEADER,
    PredictedPath,
    PredictorConfig,
    TargetState,
    direction_weights,
    format_paths_csv,
    linear_baseline,
    predict,
    routing_alpha,
    routing_transform,
    run_batch,
    sample_path,
    sample_paths,
    sample_step,
    select_path,
)
from navforecast.navmap import PatchStats, SpeedFit, map_from_patch_stats
from navforecast.render import overlay_image, write_overlay
from navforecast.netpbm import read_ppm
from navforecast.scene import OutOfSceneError, PatchGrid
from navforecast.utils import ValidationError, derive_rng

DETERMINISTIC = PredictorConfig(sigma=0.0, t_max=50)


def two_way_stats(a: int, b: int, xi: float = 1.0) -> PatchStats:
    hod = [0.0] * 9
    hod[a] = hod[b] = 0.5
    fits = [SpeedFit(0.0, 0.0, 0)] * 8
    fits[a - 1] = fits[b - 1] = SpeedFit(1.0, FLOOR, 100)
    return PatchStats(1.0, xi, tuple(hod), tuple(fits))


# ---- direction weights


def test_lambda_zero_returns_hod():
    hod = np.array([0.1, 0.2, 0.0, 0.3, 0.0, 0.0, 0.4, 0.0, 0.0])
    assert np.allclose(direction_weights(1.0, hod, 0.0), hod)


def test_equidistant_directions_split_evenly():
    hod = np.zeros(9)
    hod[2] = hod[8] = 0.5  # NE and SE around east
    assert np.allclose(direction_weights(0.0, hod, 2.0)[[2, 8]], 0.5)


def test_direction_weights_oracle():
    hod = np.zeros(9)
    hod[1] = hod[3] = 0.5
    a, b = 0.5, 0.5 * math.exp(-math.pi / 2)
    pf = direction_weights(0.0, hod, 1.0)
    assert pf[1] == pytest.approx(a / (a + b), abs=1e-12)
    assert pf[1] == pytest.approx(0.828, abs=1e-3)
    assert pf[3] == pytest.approx(0.172, abs=1e-3)


def test_stop_uses_pseudo_distance():
    hod = np.zeros(9)
    hod[0] = hod[1] = 0.5
    pf = direction_weights(0.0, hod, 1.0)
    assert pf[0] / pf[1] == pytest.approx(math.exp(-math.pi))
    pf = direction_weights(0.0, hod, 1.0, stop_distance=0.0)
    assert pf[0] == pytest.approx(0.5)


# ---- routing transform


def test_xi_one_is_uniform_on_support():
    assert np.allclose(routing_transform([0.7, 0.2, 0.1], 1.0), [1 / 3] * 3)
    out = routing_transform([0.7, 0.0, 0.3], 1.0)
    assert out.tolist() == [0.5, 0.0, 0.5]


def test_xi_half_oracle():
    out = routing_transform([0.5, 0.3, 0.2], 0.5)
    assert out == pytest.approx([0.4032, 0.3387, 0.2581], abs=1e-4)


def test_alpha_cap_limits():
    assert routing_alpha(np.array([0.0]), 64.0)[0] == 64.0
    assert routing_alpha(np.array([0.01]), 64.0)[0] == 64.0
    assert routing_alpha(np.array([0.25]), 64.0)[0] == pytest.approx(3.0)
    # at a cap of 50 the 0.6 entry gets 1 / (1 + (0.21/0.24)^50 + (0.09/0.24)^50)
    out = routing_transform([0.1, 0.3, 0.6], 0.0, alpha_cap=50.0)
    assert out[2] == pytest.approx(0.998741, abs=1e-6)
    assert routing_transform([0.1, 0.3, 0.6], 0.0)[2] >= 0.999


def test_extreme_alpha_does_not_overflow():
    out = routing_transform([1e-300, 0.5, 0.5 - 1e-300], 1e-9, alpha_cap=1e6)
    assert np.all(np.isfinite(out)) and out.sum() == pytest.approx(1.0)


@given(
    st.lists(st.floats(0.0, 1.0), min_size=9, max_size=9).filter(lambda v: sum(v) > 1e-3),
    st.floats(0.0, 1.0),
)
def test_routing_output_is_distribution_on_support(pf, xi):
    pf = np.array(pf)
    out = routing_transform(pf, xi)
    assert out.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(out[pf == 0] == 0)
    assert np.all(out >= 0)


# ---- single steps


def test_deterministic_east_step(east_map):
    rng = np.random.default_rng(0)
    nxt = sample_step(TargetState(0.0, 10.0, 1.0, 0.0), east_map, DETERMINISTIC, rng)
    # speed spread is sigma_floor, so the step is exact to a few thousandths
    assert nxt.x == pytest.approx(1.0, abs=5e-3)
    assert nxt.y == 10.0
    assert nxt.theta == 0.0


def test_step_outside_raises(east_map):
    with pytest.raises(OutOfSceneError):
        sample_step(TargetState(-1.0, 10.0, 1.0, 0.0), east_map, DETERMINISTIC, np.random.default_rng(0))


def test_fifty_fifty_frequencies():
    m = uniform_map(two_way_stats(1, 3, xi=1.0))
    n = 10_000
    starts = [TargetState(32.0, 32.0, 1.0, math.pi / 4)] * n
    u = np.random.default_rng(11).random((n, 1, 4))
    paths = run_batch(starts, None, m, PredictorConfig(sigma=0.0, t_max=1), u)
    theta = np.array([p.velocities[0, 1] for p in paths])
    east = np.mean(np.isclose(theta, 0.0))
    assert abs(east - 0.5) <= 0.02


def test_direction_frequencies_match_distribution():
    # chi-square goodness of fit of sampled directions to the routed distribution
    hod = np.array([0.0, 0.4, 0.3, 0.0, 0.2, 0.0, 0.1, 0.0, 0.0])
    fits = tuple(SpeedFit(1.0, 0.1, 10) if hod[d + 1] > 0 else SpeedFit(0, 0, 0) for d in range(8))
    st_ = PatchStats(1.0, 0.4, tuple(hod), fits)
    m = uniform_map(st_)
    theta0 = 0.3
    expected = routing_transform(direction_weights(theta0, hod, 1.0), 0.4)
    n = 20_000
    u = np.random.default_rng(5).random((n, 1, 4))
    paths = run_batch([TargetState(32, 32, 1.0, theta0)] * n, None, m, PredictorConfig(sigma=0.0, t_max=1), u)
    k = np.rint(np.array([p.velocities[0, 1] for p in paths]) / (math.pi / 4)).astype(int) % 8 + 1
    counts = np.bincount(k, minlength=9)
    sup = expected > 0
    assert counts[~sup].sum() == 0
    _, pval = sps.chisquare(counts[sup], expected[sup] * n)
    assert pval > 1e-3


def test_speeds_follow_gamma():
    m = uniform_map(one_direction_stats(1, mu=1.5, sigma=0.3), width=400)
    n = 5000
    u = np.random.default_rng(2).random((n, 1, 4))
    paths = run_batch([TargetState(10, 32, 1.0, 0.0)] * n, None, m, PredictorConfig(sigma=0.0, t_max=1), u)
    speeds = np.array([p.velocities[0, 0] for p in paths])
    shape, scale = 1.5**2 / 0.09, 0.09 / 1.5
    assert sps.kstest(speeds, "gamma", args=(shape, 0, scale)).pvalue > 1e-3


def test_noise_scatter():
    m = uniform_map(one_direction_stats(1), width=400)
    n = 10_000
    u = np.random.default_rng(9).random((n, 1, 4))
    paths = run_batch([TargetState(10, 32, 1.0, 0.0)] * n, None, m, PredictorConfig(sigma=0.1, t_max=1), u)
    pos = np.array([p.positions[0] for p in paths])
    assert np.std(pos[:, 0]) == pytest.approx(0.1, rel=0.05)
    assert np.std(pos[:, 1]) == pytest.approx(0.1, rel=0.05)
    assert np.mean(pos[:, 0]) == pytest.approx(11.0, abs=0.01)


def test_stop_keeps_heading():
    hod = [1.0] + [0.0] * 8
    stop_map = map_from_patch_stats(
        "p", PatchGrid(64, 64, 16), {i: PatchStats(1.0, 0.0, tuple(hod), (SpeedFit(0, 0, 0),) * 8) for i in range(16)}
    )
    nxt = sample_step(TargetState(30, 30, 1.0, 2.0), stop_map, DETERMINISTIC, np.random.default_rng(0))
    assert (nxt.x, nxt.y, nxt.omega, nxt.theta) == (30.0, 30.0, 0.0, 2.0)


def test_unobserved_patch_continues_velocity():
    grid = PatchGrid(64, 16, 16)
    m = map_from_patch_stats("p", grid, {0: one_direction_stats(1)})
    path = sample_path(TargetState(0.5, 8, 1.0, 0.0), None, m, PredictorConfig(sigma=0.0, t_max=80), np.random.default_rng(0))
    assert path.termination == "out-of-scene"
    assert path.fallback_steps > 0
    assert np.allclose(path.positions[:, 1], 8.0)
    stop = sample_path(
        TargetState(0.5, 8, 1.0, 0.0), None, m, PredictorConfig(sigma=0.0, t_max=80, unobserved="terminate"),
        np.random.default_rng(0),
    )
    assert stop.termination == "unobserved-patch"
    assert len(stop) == 16


# ---- paths


def test_start_in_goal_radius_gives_empty_path(east_map):
    p = sample_path(TargetState(5, 5, 1, 0), (5.2, 5.0), east_map, DETERMINISTIC, np.random.default_rng(0))
    assert len(p) == 0 and p.termination == "goal-reached"


def test_ten_steps_to_goal(east_map):
    cfg = PredictorConfig(sigma=0.0, t_max=50, goal_radius=0.5)
    p = sample_path(TargetState(0.0, 10.0, 1.0, 0.0), (10.0, 10.0), east_map, cfg, np.random.default_rng(0))
    assert len(p) == 10
    assert p.termination == "goal-reached"
    assert p.positions[-1] == pytest.approx([10.0, 10.0], abs=0.02)


def test_max_steps_and_out_of_scene(east_map):
    p = sample_path(TargetState(0.5, 10, 1, 0), None, east_map, PredictorConfig(sigma=0.0, t_max=7), np.random.default_rng(0))
    assert len(p) == 7 and p.termination == "max-steps"
    p = sample_path(TargetState(390.5, 10, 1, 0), None, east_map, DETERMINISTIC, np.random.default_rng(0))
    assert p.termination == "out-of-scene" and len(p) == 9
    assert np.all(p.positions[:, 0] <= 400)


def test_score_is_mean_rho():
    grid = PatchGrid(64, 16, 16)
    half = one_direction_stats(1)
    half = PatchStats(0.5, half.xi, half.hod, half.hos)
    m = map_from_patch_stats("p", grid, {i: half for i in range(4)})
    p = sample_path(TargetState(1, 8, 1, 0), None, m, PredictorConfig(sigma=0.0, t_max=30), np.random.default_rng(0))
    assert p.score == 0.5


def test_predict_reproducible_and_matches_sample_path(east_map):
    cfg = PredictorConfig(sigma=0.3, t_max=40, num_samples=8, seed=42)
    x0 = TargetState(2, 30, 1, 0)
    a = predict(x0, (30, 30), east_map, cfg)
    b = predict(x0, (30, 30), east_map, cfg)
    assert format_paths_csv(a) == format_paths_csv(b)
    single = sample_path(x0, (30, 30), east_map, cfg, derive_rng(42, "dbn-path", 3))
    assert np.array_equal(single.positions, a.samples[3].positions)
    c = predict(x0, (30, 30), east_map, PredictorConfig(sigma=0.3, t_max=40, num_samples=8, seed=43))
    assert format_paths_csv(a) != format_paths_csv(c)


def test_sample_count_does_not_change_earlier_samples(east_map):
    x0 = TargetState(2, 30, 1, 0)
    few = sample_paths(x0, None, east_map, PredictorConfig(t_max=20, num_samples=3))
    many = sample_paths(x0, None, east_map, PredictorConfig(t_max=20, num_samples=10))
    for a, b in zip(few, many):
        assert np.array_equal(a.positions, b.positions)


def _path(score, end):
    return PredictedPath(np.array([end], dtype=float), np.array([[1.0, 0.0]]), score, "max-steps")


def test_selection_strategies(east_map):
    x0 = TargetState(0, 0, 1, 0)
    paths = [_path(0.3, (5, 0)), _path(0.6, (9, 0))]
    assert select_path(paths, x0, None, "max-popularity", east_map) is paths[1]
    assert select_path(paths, x0, (5, 1), "closest-to-goal", east_map) is paths[0]
    assert select_path(paths, x0, None, "closest-to-goal", east_map) is paths[1]
    mean = select_path(paths, x0, None, "mean-top-10", east_map)
    assert mean.positions.tolist() == [[7.0, 0.0]]
    for s in ("max-popularity", "closest-to-goal", "mean-top-10"):
        assert select_path(paths[:1], x0, (1, 1), s, east_map) is paths[0]


def test_config_validation():
    with pytest.raises(ValidationError):
        PredictorConfig(strategy="best")
    with pytest.raises(ValidationError):
        PredictorConfig(t_max=0)
    with pytest.raises(ValidationError):
        TargetState(0, 0, -1.0, 0)


# ---- linear baseline


def test_linear_baseline_examples():
    assert linear_baseline(TargetState(0, 0, 1, 0), 5).positions[-1] == pytest.approx([5, 0])
    assert np.all(linear_baseline(TargetState(0, 0, 0, 1.0), 4).positions == 0)
    assert linear_baseline(TargetState(0, 0, 2, math.pi / 2), 3).positions[-1] == pytest.approx([0, 6])


def test_linear_baseline_stops_at_border_and_goal():
    grid = PatchGrid(20, 20, 5)
    p = linear_baseline(TargetState(15, 10, 1, 0), 30, grid)
    assert len(p) == 5 and p.termination == "out-of-scene"
    p = linear_baseline(TargetState(0, 10, 1, 0), 30, grid, goal=(10, 10), goal_radius=0.5)
    assert len(p) == 10 and p.termination == "goal-reached"


# ---- export


def test_paths_csv_layout(east_map):
    pred = predict(TargetState(2, 30, 1, 0), None, east_map, PredictorConfig(t_max=3, num_samples=2))
    lines = format_paths_csv(pred).splitlines()
    assert lines[0] == PATHS_HEADER
    assert len(lines) == 1 + 3 * 3
    assert lines[1].startswith("selected,1,")
    assert lines[4].startswith("0,1,") and lines[-1].startswith("1,3,")


def test_overlay(tmp_path, east_map):
    x0 = TargetState(2, 30, 1, 0)
    pred = predict(x0, None, east_map, PredictorConfig(sigma=0.0, t_max=20, num_samples=2))
    bg = np.zeros((64, 400, 3), dtype=np.uint8)
    img = overlay_image(bg, pred, x0)
    assert tuple(img[30, 10]) == (230, 30, 30)
    assert tuple(img[30, 2]) == (20, 20, 230)
    assert img[:29].sum() == 0
    write_overlay(tmp_path / "o.ppm", east_map, pred, x0)
    assert read_ppm(tmp_path / "o.ppm").shape == (64, 400, 3)
