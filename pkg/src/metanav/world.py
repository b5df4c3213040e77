"""2D world simulation: procedural occupancy grids, unicycle kinematics,
planar lidar, collision checks and costmap inflation.

Coordinates are metric with the origin at the lower-left corner of the map.
Cell ``(row, col)`` covers ``[col*res, (col+1)*res) x [row*res, (row+1)*res)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import ndimage

from metanav.angles import wrap_to_pi, wrap_to_pi_array

RESOLUTION = 0.05
ROBOT_RADIUS = 0.25
V_CAP = 2.0
OMEGA_CAP = 3.14

SCAN_BEAMS = 720
SCAN_FOV = math.radians(270.0)
SCAN_MAX_RANGE = 2.0

INFLATION_DECAY = 5.0  # 1/m
INFLATION_BOUNDS = (0.1, 0.6)

MAX_MAP_ATTEMPTS = 100
_BLOB_UNIT_M = 0.3
_ZONE_RADIUS_M = 1.0
_EDGE_OFFSET_M = 1.0


class Difficulty(str, Enum):
    EASY = "easy"
    MEDIUM = "medium"
    DIFFICULT = "difficult"

    @classmethod
    def parse(cls, value: str | Difficulty) -> Difficulty:
        if isinstance(value, Difficulty):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown difficulty {value!r}; expected one of "
                             f"{[d.value for d in cls]}") from None


# (target occupied fraction, minimum gap in robot diameters)
DIFFICULTY_PARAMS: dict[Difficulty, tuple[float, float]] = {
    Difficulty.EASY: (0.08, 4.0),
    Difficulty.MEDIUM: (0.15, 2.5),
    Difficulty.DIFFICULT: (0.22, 1.5),
}


class MapGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    w: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite position ({self.x}, {self.y})")
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "w", wrap_to_pi(float(self.w)))

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.w)

    def distance_to(self, x: float, y: float) -> float:
        return math.hypot(x - self.x, y - self.y)


@dataclass(frozen=True)
class Command:
    v: float
    omega: float

    def __post_init__(self) -> None:
        # the 3.14 rad/s table bound is pi at two decimals; pi itself is accepted
        if abs(self.v) > V_CAP + 1e-9 or abs(self.omega) > max(OMEGA_CAP, math.pi) + 1e-9:
            raise ValueError(f"command ({self.v}, {self.omega}) exceeds hard caps")
        object.__setattr__(self, "v", float(self.v))
        object.__setattr__(self, "omega", float(self.omega))


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """Binary obstacle map. ``cells[row, col]`` is True where occupied."""

    cells: np.ndarray
    resolution: float = RESOLUTION
    difficulty: Difficulty = Difficulty.EASY
    seed: int = 0
    start: tuple[int, int] = (0, 0)
    goal: tuple[int, int] = (0, 0)

    def __post_init__(self) -> None:
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        cells = np.array(self.cells, dtype=bool)
        if cells.ndim != 2:
            raise ValueError("cells must be a 2D array")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "difficulty", Difficulty.parse(self.difficulty))
        object.__setattr__(self, "start", (int(self.start[0]), int(self.start[1])))
        object.__setattr__(self, "goal", (int(self.goal[0]), int(self.goal[1])))

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def width_m(self) -> float:
        return self.width * self.resolution

    @property
    def height_m(self) -> float:
        return self.height * self.resolution

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, OccupancyGrid):
            return NotImplemented
        return (self.resolution == other.resolution
                and self.difficulty == other.difficulty
                and self.seed == other.seed
                and self.start == other.start
                and self.goal == other.goal
                and self.cells.shape == other.cells.shape
                and bool(np.array_equal(self.cells, other.cells)))

    __hash__ = None  # type: ignore[assignment]

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        return int(math.floor(y / self.resolution)), int(math.floor(x / self.resolution))

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return (col + 0.5) * self.resolution, (row + 0.5) * self.resolution

    def in_bounds(self, x: float, y: float) -> bool:
        return 0.0 <= x < self.width_m and 0.0 <= y < self.height_m

    def start_pose(self) -> Pose:
        x, y = self.cell_center(*self.start)
        return Pose(x, y, 0.0)

    def goal_xy(self) -> tuple[float, float]:
        return self.cell_center(*self.goal)

    @cached_property
    def distance_field(self) -> np.ndarray:
        """Metric distance from each cell center to the nearest occupied cell center."""
        if not self.cells.any():
            d = np.full(self.cells.shape, np.inf)
        else:
            d = ndimage.distance_transform_edt(~self.cells) * self.resolution
        d.setflags(write=False)
        return d

    def to_text(self) -> str:
        rows = np.where(self.cells, "#", ".").astype("<U1")
        rows[self.start] = "S"
        rows[self.goal] = "G"
        lines = [f"{self.width} {self.height} {self.resolution!r} {self.seed} "
                 f"{self.difficulty.value}"]
        # top row (largest y) first, like an image
        lines.extend("".join(r) for r in rows[::-1])
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> OccupancyGrid:
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty map file")
        head = lines[0].split()
        if len(head) != 5:
            raise ValueError(f"bad map header {lines[0]!r}")
        w, h, res, seed, diff = int(head[0]), int(head[1]), float(head[2]), int(head[3]), head[4]
        body = lines[1:]
        if len(body) != h or any(len(r) != w for r in body):
            raise ValueError(f"map body does not match header dimensions {w}x{h}")
        chars = np.array([list(r) for r in body[::-1]])
        bad = ~np.isin(chars, ["#", ".", "S", "G"])
        if bad.any():
            raise ValueError(f"unexpected map character {chars[bad][0]!r}")
        starts = np.argwhere(chars == "S")
        goals = np.argwhere(chars == "G")
        if len(starts) != 1 or len(goals) != 1:
            raise ValueError("map must contain exactly one S and one G")
        return cls(cells=chars == "#", resolution=res, difficulty=Difficulty.parse(diff),
                   seed=seed, start=tuple(starts[0]), goal=tuple(goals[0]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> OccupancyGrid:
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True, eq=False)
class Costmap:
    cost: np.ndarray
    resolution: float
    inflation_radius: float
    robot_radius: float = ROBOT_RADIUS

    def cost_at(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Cell cost under metric points; anything off the map is lethal."""
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        cols = np.floor(xs / self.resolution).astype(np.int64)
        rows = np.floor(ys / self.resolution).astype(np.int64)
        h, w = self.cost.shape
        inside = (rows >= 0) & (rows < h) & (cols >= 0) & (cols < w)
        out = np.ones(np.broadcast(xs, ys).shape)
        out[inside] = self.cost[rows[inside], cols[inside]]
        return out


@dataclass(frozen=True, eq=False)
class Scan:
    ranges: np.ndarray
    fov: float = SCAN_FOV
    max_range: float = SCAN_MAX_RANGE

    @property
    def relative_angles(self) -> np.ndarray:
        return beam_angles(len(self.ranges), self.fov)


def beam_angles(n: int = SCAN_BEAMS, fov: float = SCAN_FOV) -> np.ndarray:
    """Beam angles relative to the heading, uniformly spaced and centered on it."""
    return np.linspace(-fov / 2.0, fov / 2.0, n)


# ---------------------------------------------------------------------------
# map generation


def _disk_offsets(radius_cells: float) -> np.ndarray:
    r = int(math.ceil(radius_cells))
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    keep = xx * xx + yy * yy <= radius_cells * radius_cells
    return np.stack([yy[keep], xx[keep]], axis=1)


def _close_gaps(occ: np.ndarray, radius_cells: float) -> np.ndarray:
    """Morphological closing with a disk: fills free gaps narrower than 2*radius.

    Outside of the array counts as occupied, so slits against the border are
    filled too.
    """
    dist_to_occ = ndimage.distance_transform_edt(~occ)
    dilated = dist_to_occ <= radius_cells
    padded = np.pad(dilated, 1, constant_values=False)
    padded[1:-1, 1:-1] = dilated
    # distance from each dilated cell to the nearest non-dilated cell; the
    # frame row is marked dilated so the map edge behaves like a wall
    padded[0, :] = padded[-1, :] = True
    padded[:, 0] = padded[:, -1] = True
    dist_to_free = ndimage.distance_transform_edt(padded)[1:-1, 1:-1]
    return dist_to_free > radius_cells


def _blob_cells(rng: np.random.Generator, n_units: int, unit: int) -> list[tuple[int, int]]:
    """A connected cluster of ``n_units`` square units, as unit-grid offsets."""
    units = [(0, 0)]
    while len(units) < n_units:
        r, c = units[int(rng.integers(len(units)))]
        dr, dc = ((1, 0), (-1, 0), (0, 1), (0, -1))[int(rng.integers(4))]
        if (r + dr, c + dc) not in units:
            units.append((r + dr, c + dc))
    return units


def _try_generate(difficulty: Difficulty, rng: np.random.Generator, w: int, h: int,
                  res: float, robot_radius: float) -> tuple[np.ndarray, tuple[int, int],
                                                            tuple[int, int]] | None:
    density, gap_diameters = DIFFICULTY_PARAMS[difficulty]
    min_gap = gap_diameters * 2.0 * robot_radius
    unit = max(1, int(round(_BLOB_UNIT_M / res)))

    edge = int(round(_EDGE_OFFSET_M / res))
    lo_row, hi_row = int(0.3 * h), int(0.7 * h)
    start = (int(rng.integers(lo_row, hi_row)), edge)
    goal = (int(rng.integers(lo_row, hi_row)), w - 1 - edge)

    base = np.zeros((h, w), dtype=bool)
    base[0, :] = base[-1, :] = True
    base[:, 0] = base[:, -1] = True

    rows, cols = np.mgrid[0:h, 0:w]
    zone_r = max(_ZONE_RADIUS_M, min_gap / 2.0) / res
    zone = np.zeros((h, w), dtype=bool)
    for r0, c0 in (start, goal):
        zone |= (rows - r0) ** 2 + (cols - c0) ** 2 <= (zone_r + unit) ** 2

    # pre-draw a long blob sequence, then pick how many to keep
    blobs: list[np.ndarray] = []
    for _ in range(4000):
        if len(blobs) >= 600:
            break
        n_units = int(rng.integers(1, 4))
        r0 = int(rng.integers(0, h))
        c0 = int(rng.integers(0, w))
        mask = np.zeros((h, w), dtype=bool)
        for ur, uc in _blob_cells(rng, n_units, unit):
            rr, cc = r0 + ur * unit, c0 + uc * unit
            mask[max(rr, 0):max(rr + unit, 0), max(cc, 0):max(cc + unit, 0)] = True
        if not mask.any() or (mask & zone).any():
            continue
        blobs.append(mask)

    radius_cells = (min_gap / 2.0) / res
    cache: dict[int, np.ndarray] = {}

    def layout(n: int) -> np.ndarray:
        if n not in cache:
            occ = base.copy()
            for m in blobs[:n]:
                occ |= m
            occ = _close_gaps(occ, radius_cells)
            cache[n] = occ
        return cache[n]

    lo, hi = 0, len(blobs)
    if layout(hi).mean() < density:
        n = hi
    else:
        while lo < hi:
            mid = (lo + hi) // 2
            if layout(mid).mean() >= density:
                hi = mid
            else:
                lo = mid + 1
        n = lo
        if n > 0 and abs(layout(n - 1).mean() - density) < abs(layout(n).mean() - density):
            n -= 1
    occ = layout(n)

    free_space = ndimage.distance_transform_edt(~occ) * res > robot_radius
    labels, _ = ndimage.label(free_space, structure=np.ones((3, 3)))
    if not (free_space[start] and free_space[goal]) or labels[start] != labels[goal]:
        return None
    return occ, start, goal


def generate_map(difficulty: Difficulty | str, seed: int, width_m: float = 10.0,
                 height_m: float = 10.0, resolution: float = RESOLUTION,
                 robot_radius: float = ROBOT_RADIUS) -> OccupancyGrid:
    """Seeded procedural map with a start cell on the left and a goal cell on the right.

    Obstacles are clusters of 1-3 square units. Gaps narrower than the
    difficulty's minimum corridor width are closed, and clusters are added
    until the occupied fraction reaches the difficulty's target density.
    Start and goal are checked for connectivity in the robot's configuration
    space; failed layouts are redrawn with the next sub-seed.
    """
    difficulty = Difficulty.parse(difficulty)
    if width_m < 5.0 or height_m < 5.0:
        raise ValueError(f"map must be at least 5 m x 5 m, got {width_m} x {height_m}")
    w = int(round(width_m / resolution))
    h = int(round(height_m / resolution))
    seed_u64 = int(seed) % (1 << 64)
    for attempt in range(MAX_MAP_ATTEMPTS):
        rng = np.random.default_rng(np.random.SeedSequence([seed_u64, attempt]))
        result = _try_generate(difficulty, rng, w, h, resolution, robot_radius)
        if result is not None:
            occ, start, goal = result
            return OccupancyGrid(cells=occ, resolution=resolution, difficulty=difficulty,
                                 seed=int(seed), start=start, goal=goal)
    raise MapGenerationError(
        f"no connected {difficulty.value} map for seed {seed} after {MAX_MAP_ATTEMPTS} attempts")


# ---------------------------------------------------------------------------
# kinematics, sensing, collision


def step_kinematics(pose: Pose, cmd: Command, dt: float) -> Pose:
    """Exact constant-twist (unicycle arc) integration over ``dt``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    v, om = cmd.v, cmd.omega
    if abs(om) < 1e-9:
        return Pose(pose.x + v * math.cos(pose.w) * dt,
                    pose.y + v * math.sin(pose.w) * dt,
                    pose.w + om * dt)
    r = v / om
    w1 = pose.w + om * dt
    return Pose(pose.x + r * (math.sin(w1) - math.sin(pose.w)),
                pose.y - r * (math.cos(w1) - math.cos(pose.w)),
                w1)


def step_kinematics_batch(x: np.ndarray, y: np.ndarray, w: np.ndarray, v: np.ndarray,
                          om: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised :func:`step_kinematics`; headings are returned unwrapped."""
    straight = np.abs(om) < 1e-9
    w1 = w + om * dt
    safe_om = np.where(straight, 1.0, om)
    r = v / safe_om
    x_arc = x + r * (np.sin(w1) - np.sin(w))
    y_arc = y - r * (np.cos(w1) - np.cos(w))
    x_lin = x + v * np.cos(w) * dt
    y_lin = y + v * np.sin(w) * dt
    return np.where(straight, x_lin, x_arc), np.where(straight, y_lin, y_arc), w1


def cast_scan(grid: OccupancyGrid, pose: Pose, n_beams: int = SCAN_BEAMS,
              fov: float = SCAN_FOV, max_range: float = SCAN_MAX_RANGE) -> Scan:
    """Planar lidar by exact grid traversal (DDA) to the first occupied cell.

    Cells outside the map count as occupied. Readings are capped at ``max_range``.
    """
    if not grid.in_bounds(pose.x, pose.y):
        raise ValueError(f"pose ({pose.x:.3f}, {pose.y:.3f}) outside the map")
    res = grid.resolution
    cells = grid.cells
    h, w = cells.shape
    ang = pose.w + beam_angles(n_beams, fov)
    dx, dy = np.cos(ang), np.sin(ang)
    ox, oy = pose.x / res, pose.y / res
    col = np.full(n_beams, int(math.floor(ox)))
    row = np.full(n_beams, int(math.floor(oy)))
    step_c = np.where(dx > 0, 1, -1)
    step_r = np.where(dy > 0, 1, -1)
    with np.errstate(divide="ignore"):
        t_delta_c = np.where(dx != 0, np.abs(1.0 / dx), np.inf)
        t_delta_r = np.where(dy != 0, np.abs(1.0 / dy), np.inf)
        t_max_c = np.where(dx > 0, (col + 1 - ox) / dx,
                           np.where(dx < 0, (ox - col) / -dx, np.inf))
        t_max_r = np.where(dy > 0, (row + 1 - oy) / dy,
                           np.where(dy < 0, (oy - row) / -dy, np.inf))
    limit = max_range / res
    t_entry = np.zeros(n_beams)
    ranges = np.full(n_beams, max_range)
    active = np.ones(n_beams, dtype=bool)
    while active.any():
        idx = np.nonzero(active)[0]
        r, c = row[idx], col[idx]
        outside = (r < 0) | (r >= h) | (c < 0) | (c >= w)
        hit = outside.copy()
        inside = ~outside
        hit[inside] = cells[r[inside], c[inside]]
        if hit.any():
            hi = idx[hit]
            ranges[hi] = np.minimum(t_entry[hi] * res, max_range)
            active[hi] = False
        idx = idx[~hit]
        if idx.size == 0:
            break
        adv_c = t_max_c[idx] < t_max_r[idx]
        ic, ir = idx[adv_c], idx[~adv_c]
        t_entry[ic] = t_max_c[ic]
        col[ic] += step_c[ic]
        t_max_c[ic] += t_delta_c[ic]
        t_entry[ir] = t_max_r[ir]
        row[ir] += step_r[ir]
        t_max_r[ir] += t_delta_r[ir]
        past = t_entry[idx] > limit
        active[idx[past]] = False
    # a pose inside an occupied cell would read zero; readings stay positive
    ranges = np.maximum(ranges, 1e-6)
    ranges.setflags(write=False)
    return Scan(ranges=ranges, fov=fov, max_range=max_range)


def check_collision(grid: OccupancyGrid, pose: Pose, robot_radius: float = ROBOT_RADIUS) -> bool:
    """True iff an occupied cell center lies within ``robot_radius``, or the pose is off-map."""
    if robot_radius <= 0:
        raise ValueError("robot_radius must be positive")
    if not grid.in_bounds(pose.x, pose.y):
        return True
    res = grid.resolution
    c_lo = max(int(math.floor((pose.x - robot_radius) / res - 0.5)), 0)
    c_hi = min(int(math.ceil((pose.x + robot_radius) / res - 0.5)), grid.width - 1)
    r_lo = max(int(math.floor((pose.y - robot_radius) / res - 0.5)), 0)
    r_hi = min(int(math.ceil((pose.y + robot_radius) / res - 0.5)), grid.height - 1)
    window = grid.cells[r_lo:r_hi + 1, c_lo:c_hi + 1]
    if not window.any():
        return False
    rr, cc = np.nonzero(window)
    cx = (cc + c_lo + 0.5) * res
    cy = (rr + r_lo + 0.5) * res
    d2 = (cx - pose.x) ** 2 + (cy - pose.y) ** 2
    return bool((d2 <= robot_radius * robot_radius).any())


def inflation_cost(distance: np.ndarray, inflation_radius: float,
                   robot_radius: float = ROBOT_RADIUS) -> np.ndarray:
    """Lethal (1) inside the robot radius, exponential decay out to
    ``robot_radius + inflation_radius`` renormalised to reach exactly 0 there."""
    d = np.asarray(distance, dtype=float)
    x = d - robot_radius
    floor = math.exp(-INFLATION_DECAY * inflation_radius)
    with np.errstate(over="ignore"):
        decay = (np.exp(-INFLATION_DECAY * np.clip(x, 0.0, None)) - floor) / (1.0 - floor)
    cost = np.where(x <= 0, 1.0, np.where(x >= inflation_radius, 0.0, decay))
    return np.clip(cost, 0.0, 1.0)


def inflate(grid: OccupancyGrid, inflation_radius: float,
            robot_radius: float = ROBOT_RADIUS) -> Costmap:
    lo, hi = INFLATION_BOUNDS
    if not (lo <= inflation_radius <= hi):
        raise ValueError(f"inflation_radius {inflation_radius} outside [{lo}, {hi}]")
    cost = inflation_cost(grid.distance_field, inflation_radius, robot_radius)
    cost.setflags(write=False)
    return Costmap(cost=cost, resolution=grid.resolution,
                   inflation_radius=float(inflation_radius), robot_radius=robot_radius)


def empty_grid(width_m: float, height_m: float, resolution: float = RESOLUTION,
               border: bool = True) -> np.ndarray:
    """Boolean cell array with only the border occupied (test and fixture helper)."""
    w = int(round(width_m / resolution))
    h = int(round(height_m / resolution))
    cells = np.zeros((h, w), dtype=bool)
    if border:
        cells[0, :] = cells[-1, :] = True
        cells[:, 0] = cells[:, -1] = True
    return cells


__all__ = [
    "Command", "Costmap", "Difficulty", "MapGenerationError", "OccupancyGrid", "Pose",
    "Scan", "beam_angles", "cast_scan", "check_collision", "empty_grid", "generate_map",
    "inflate", "inflation_cost", "step_kinematics", "step_kinematics_batch",
    "wrap_to_pi_array",
]
