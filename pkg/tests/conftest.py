import math

import numpy as np
import pytest
from hypothesis import settings

from navforecast.navmap import PatchStats, SpeedFit, map_from_patch_stats
from navforecast.scene import PatchGrid

settings.register_profile("navforecast", deadline=None, max_examples=60)
settings.load_profile("navforecast")

FLOOR = 1e-3


def one_direction_stats(direction: int, mu: float = 1.0, sigma: float = FLOOR, xi: float = 0.0) -> PatchStats:
    hod = [0.0] * 9
    hod[direction] = 1.0
    fits = [SpeedFit(0.0, 0.0, 0)] * 8
    fits[direction - 1] = SpeedFit(mu, sigma, 100)
    return PatchStats(1.0, xi, tuple(hod), tuple(fits))


def uniform_map(stats: PatchStats, width: int = 64, height: int = 64, patch_size: int = 16):
    grid = PatchGrid(width, height, patch_size)
    return map_from_patch_stats("pedestrian", grid, {i: stats for i in range(grid.num_patches)})


@pytest.fixture
def east_map():
    """Every patch sends agents east at exactly one unit per frame."""
    return uniform_map(one_direction_stats(1), width=400, height=64)


def circle(r: float, n: int = 100, turns: float = 1.0) -> np.ndarray:
    t = np.arange(int(n * turns)) * 2 * math.pi / n
    return np.column_stack([r * np.cos(t), r * np.sin(t)])


# one summary line per acceptance criterion, with the measured values
_criteria: list[tuple[str, str, str]] = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        detail = dict(report.user_properties).get("detail", "")
        _criteria.append((report.nodeid.split("::")[-1], report.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for name, outcome, detail in _criteria:
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {name}  {detail}")
