from __future__ import annotations

import numpy as np
import pytest

from metanav.world import OccupancyGrid, empty_grid

# criterion id -> (passed, detail); filled by test_acceptance, printed at the end
ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def corridor(length_m: float = 12.0, width_m: float = 3.0, start_x: float = 1.0,
             goal_x: float | None = None, res: float = 0.05) -> OccupancyGrid:
    """Bordered empty rectangle with start and goal on the centre line."""
    cells = empty_grid(length_m, width_m, res)
    row = cells.shape[0] // 2
    goal_x = length_m - 1.0 if goal_x is None else goal_x
    return OccupancyGrid(cells, res, "easy", 0, (row, int(start_x / res)), (row, int(goal_x / res)))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE_RESULTS):
        ok, detail = ACCEPTANCE_RESULTS[cid]
        terminalreporter.write_line(f"criterion {cid:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
