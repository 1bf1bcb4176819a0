"""Deterministic 2-D occupancy-grid world.

Coordinates are (x, y) with x growing east and y growing south; the
border is always blocked. Motion is 4-connected and matches the
discrete action space exactly, so BFS geodesics double as executable
teacher paths.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import WorldGenerationError
from .rng import stream

WORLD_MAGIC = "MGWORLD1"
DEFAULT_CELL_SIZE = 0.25


class Heading(IntEnum):
    NORTH = 0
    EAST = 1
    SOUTH = 2
    WEST = 3


class Action(IntEnum):
    STOP = 0
    MOVE_FORWARD = 1
    TURN_LEFT = 2
    TURN_RIGHT = 3


# (dx, dy) per heading; NORTH decreases y.
HEADING_DELTAS = {
    Heading.NORTH: (0, -1),
    Heading.EAST: (1, 0),
    Heading.SOUTH: (0, 1),
    Heading.WEST: (-1, 0),
}

NEIGHBOR_OFFSETS = ((0, -1), (1, 0), (0, 1), (-1, 0))


@dataclass(frozen=True)
class AgentPose:
    x: int
    y: int
    heading: Heading

    @property
    def cell(self) -> tuple[int, int]:
        return (self.x, self.y)


@dataclass
class GridWorld:
    width: int
    height: int
    occupancy: np.ndarray  # bool, shape (height, width); True = blocked
    cell_size: float = DEFAULT_CELL_SIZE
    seed: int | None = None

    def blocked(self, x: int, y: int) -> bool:
        if not (0 <= x < self.width and 0 <= y < self.height):
            return True
        return bool(self.occupancy[y, x])

    def free_cells(self) -> list[tuple[int, int]]:
        ys, xs = np.nonzero(~self.occupancy)
        return list(zip(xs.tolist(), ys.tolist()))


def _flood_components(occ: np.ndarray) -> list[set[tuple[int, int]]]:
    height, width = occ.shape
    seen = np.zeros_like(occ, dtype=bool)
    comps = []
    for sy in range(height):
        for sx in range(width):
            if occ[sy, sx] or seen[sy, sx]:
                continue
            comp = set()
            q = deque([(sx, sy)])
            seen[sy, sx] = True
            while q:
                x, y = q.popleft()
                comp.add((x, y))
                for dx, dy in NEIGHBOR_OFFSETS:
                    nx, ny = x + dx, y + dy
                    if 0 <= nx < width and 0 <= ny < height and not occ[ny, nx] and not seen[ny, nx]:
                        seen[ny, nx] = True
                        q.append((nx, ny))
            comps.append(comp)
    return comps


def largest_free_component(world: GridWorld) -> set[tuple[int, int]]:
    comps = _flood_components(world.occupancy)
    if not comps:
        return set()
    return max(comps, key=len)


def generate_world(
    seed: int,
    width: int,
    height: int,
    obstacle_density: float,
    cell_size: float = DEFAULT_CELL_SIZE,
    max_retries: int = 64,
) -> GridWorld:
    """Seeded world: border walls, optional room rectangles with door
    gaps, and random scatter obstacles. Regenerates until the largest
    free component holds at least 60% of the free cells."""
    if not 0.0 <= obstacle_density <= 0.4:
        raise ValueError(f"obstacle density must be in [0, 0.4], got {obstacle_density}")
    if width < 5 or height < 5:
        raise ValueError("world must be at least 5x5")
    rng = stream(seed, "world")
    for _ in range(max_retries):
        occ = np.zeros((height, width), dtype=bool)
        occ[0, :] = occ[-1, :] = True
        occ[:, 0] = occ[:, -1] = True
        if obstacle_density > 0.0:
            _carve_rooms(occ, rng)
            interior = ~occ
            interior[0, :] = interior[-1, :] = False
            interior[:, 0] = interior[:, -1] = False
            scatter = rng.random((height, width)) < obstacle_density
            occ |= scatter & interior
        free = int((~occ).sum())
        if free == 0:
            continue
        comps = _flood_components(occ)
        if comps and len(max(comps, key=len)) >= 0.6 * free:
            return GridWorld(width, height, occ, cell_size=cell_size, seed=seed)
    raise WorldGenerationError(
        f"no connected-enough layout after {max_retries} tries "
        f"(seed={seed}, {width}x{height}, density={obstacle_density})"
    )


def _carve_rooms(occ: np.ndarray, rng: np.random.Generator) -> None:
    height, width = occ.shape
    n_rooms = min(3, (width * height) // 150)
    for _ in range(n_rooms):
        rw = int(rng.integers(4, max(5, width // 2)))
        rh = int(rng.integers(4, max(5, height // 2)))
        x0 = int(rng.integers(1, max(2, width - rw - 1)))
        y0 = int(rng.integers(1, max(2, height - rh - 1)))
        x1, y1 = min(x0 + rw, width - 2), min(y0 + rh, height - 2)
        perimeter = []
        for x in range(x0, x1 + 1):
            perimeter.append((x, y0))
            perimeter.append((x, y1))
        for y in range(y0 + 1, y1):
            perimeter.append((x0, y))
            perimeter.append((x1, y))
        for x, y in perimeter:
            occ[y, x] = True
        # Two door gaps keep the room reachable.
        doors = rng.choice(len(perimeter), size=min(2, len(perimeter)), replace=False)
        for di in np.atleast_1d(doors):
            x, y = perimeter[int(di)]
            occ[y, x] = False


def apply_action(world: GridWorld, pose: AgentPose, action: Action) -> AgentPose:
    """MOVE_FORWARD advances one cell unless blocked (collision is a
    silent no-op); turns rotate 90 degrees; STOP leaves pose unchanged."""
    if action == Action.MOVE_FORWARD:
        dx, dy = HEADING_DELTAS[pose.heading]
        nx, ny = pose.x + dx, pose.y + dy
        if world.blocked(nx, ny):
            return pose
        return AgentPose(nx, ny, pose.heading)
    if action == Action.TURN_LEFT:
        return AgentPose(pose.x, pose.y, Heading((pose.heading - 1) % 4))
    if action == Action.TURN_RIGHT:
        return AgentPose(pose.x, pose.y, Heading((pose.heading + 1) % 4))
    return pose


# ---------------------------------------------------------------------------
# Observation: a heading-invariant (panoramic) occupancy neighborhood.
# ---------------------------------------------------------------------------

OBS_RADIUS = 4
# Cell-position one-hot resolution. Near cell-exact on desk-scale
# worlds: consecutive positions land in different bands, which is what
# lets a recurrent policy recover its own motion (and thus heading)
# from the heading-invariant panoramic observations.
POSITION_BANDS = 24

FREE, BLOCKED, UNKNOWN = 0.0, 1.0, 0.5

# Weight of the position one-hots relative to occupancy values in the
# flattened observation. Two band bits against ~144 patch values would
# otherwise barely survive the random projection; downstream learning
# needs the agent's (and goal's) position linearly recoverable from the
# embedding.
BAND_SCALE = 8.0


@dataclass
class Patch:
    """Visibility-masked neighborhood in a canonical (north-up) frame,
    plus coarse one-hot bands encoding the absolute cell position."""

    grid: np.ndarray  # (2r+1, 2r+1) of FREE/BLOCKED/UNKNOWN
    x_band: np.ndarray
    y_band: np.ndarray
    cell: tuple[int, int]

    @property
    def radius(self) -> int:
        return (self.grid.shape[0] - 1) // 2

    def directional_slices(self) -> list[np.ndarray]:
        """Four overlapping panoramic slices (N, E, S, W) of the grid."""
        r = self.radius
        g = self.grid
        return [g[0:r, :], g[:, r + 1 :], g[r + 1 :, :], g[:, 0:r]]

    def flatten(self) -> np.ndarray:
        parts = [s.reshape(-1) for s in self.directional_slices()]
        parts.append(BAND_SCALE * self.x_band)
        parts.append(BAND_SCALE * self.y_band)
        return np.concatenate(parts)


def patch_input_dim(radius: int = OBS_RADIUS, bands: int = POSITION_BANDS) -> int:
    return 4 * radius * (2 * radius + 1) + 2 * bands


def _visible(world: GridWorld, x0: int, y0: int, x1: int, y1: int) -> bool:
    """Line of sight along a Bresenham ray; every cell strictly between
    the endpoints must be free and in bounds."""
    dx, dy = abs(x1 - x0), abs(y1 - y0)
    sx = 1 if x1 > x0 else -1
    sy = 1 if y1 > y0 else -1
    err = dx - dy
    x, y = x0, y0
    while True:
        if (x, y) != (x0, y0) and (x, y) != (x1, y1):
            if world.blocked(x, y):
                return False
        if (x, y) == (x1, y1):
            return True
        e2 = 2 * err
        if e2 > -dy:
            err -= dy
            x += sx
        if e2 < dx:
            err += dx
            y += sy


def observe(
    world: GridWorld,
    pose: AgentPose,
    radius: int = OBS_RADIUS,
    bands: int = POSITION_BANDS,
) -> Patch:
    """Panoramic occupancy patch at the pose's cell; identical for all
    headings at that cell. Cells behind obstacles read UNKNOWN; cells
    outside the world always read UNKNOWN."""
    size = 2 * radius + 1
    grid = np.full((size, size), UNKNOWN)
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            x, y = pose.x + dx, pose.y + dy
            if not (0 <= x < world.width and 0 <= y < world.height):
                continue
            if _visible(world, pose.x, pose.y, x, y):
                grid[dy + radius, dx + radius] = BLOCKED if world.blocked(x, y) else FREE
    x_band = np.zeros(bands)
    y_band = np.zeros(bands)
    x_band[min(bands - 1, pose.x * bands // world.width)] = 1.0
    y_band[min(bands - 1, pose.y * bands // world.height)] = 1.0
    return Patch(grid=grid, x_band=x_band, y_band=y_band, cell=pose.cell)


# ---------------------------------------------------------------------------
# BFS shortest paths (the oracle) and the success predicate.
# ---------------------------------------------------------------------------


def bfs_distance_field(world: GridWorld, source: tuple[int, int] | list[tuple[int, int]]) -> np.ndarray:
    """Hop counts from the source cell(s); unreachable cells are -1."""
    sources = [source] if isinstance(source, tuple) else list(source)
    dist = np.full((world.height, world.width), -1, dtype=np.int64)
    q = deque()
    for x, y in sources:
        if world.blocked(x, y):
            raise ValueError(f"BFS source ({x}, {y}) is blocked")
        if dist[y, x] < 0:
            dist[y, x] = 0
            q.append((x, y))
    while q:
        x, y = q.popleft()
        for dx, dy in NEIGHBOR_OFFSETS:
            nx, ny = x + dx, y + dy
            if not world.blocked(nx, ny) and dist[ny, nx] < 0:
                dist[ny, nx] = dist[y, x] + 1
                q.append((nx, ny))
    return dist


def shortest_path(
    world: GridWorld, a: tuple[int, int], b: tuple[int, int]
) -> tuple[float, list[tuple[int, int]]]:
    """4-connected BFS geodesic. Returns (length in meters, cell path
    a..b inclusive); (inf, []) when disconnected."""
    for name, cell in (("start", a), ("end", b)):
        if world.blocked(*cell):
            raise ValueError(f"shortest_path {name} cell {cell} is blocked")
    if a == b:
        return 0.0, [a]
    dist = bfs_distance_field(world, b)
    if dist[a[1], a[0]] < 0:
        return float("inf"), []
    # Walk downhill on the distance-from-goal field.
    path = [a]
    x, y = a
    while (x, y) != b:
        d_here = dist[y, x]
        for dx, dy in NEIGHBOR_OFFSETS:
            nx, ny = x + dx, y + dy
            if not world.blocked(nx, ny) and dist[ny, nx] == d_here - 1:
                x, y = nx, ny
                break
        path.append((x, y))
    return float(dist[a[1], a[0]]) * world.cell_size, path


def success_check(
    pose: AgentPose | tuple[int, int],
    goal_cell: tuple[int, int],
    cell_size: float = DEFAULT_CELL_SIZE,
    radius_m: float = 1.0,
) -> bool:
    """True iff the Euclidean cell-center distance is within radius_m
    (boundary inclusive)."""
    cell = pose.cell if isinstance(pose, AgentPose) else pose
    dx = cell[0] - goal_cell[0]
    dy = cell[1] - goal_cell[1]
    return float(np.hypot(dx, dy)) * cell_size <= radius_m


# ---------------------------------------------------------------------------
# World file format: header "MGWORLD1 <width> <height> <cell_size>",
# then one row per line, '#' blocked and '.' free.
# ---------------------------------------------------------------------------


def save_world(path, world: GridWorld) -> None:
    lines = [f"{WORLD_MAGIC} {world.width} {world.height} {world.cell_size}"]
    for y in range(world.height):
        lines.append("".join("#" if world.occupancy[y, x] else "." for x in range(world.width)))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_world(path) -> GridWorld:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip() != ""]
    header = lines[0].split()
    if len(header) != 4 or header[0] != WORLD_MAGIC:
        raise ValueError(f"bad world header: {lines[0]!r}")
    width, height = int(header[1]), int(header[2])
    cell_size = float(header[3])
    rows = lines[1:]
    if len(rows) != height:
        raise ValueError(f"expected {height} rows, found {len(rows)}")
    occ = np.zeros((height, width), dtype=bool)
    for y, row in enumerate(rows):
        if len(row) != width:
            raise ValueError(f"row {y} has width {len(row)}, expected {width}")
        for x, ch in enumerate(row):
            if ch == "#":
                occ[y, x] = True
            elif ch != ".":
                raise ValueError(f"bad cell character {ch!r} at ({x}, {y})")
    world = GridWorld(width, height, occ, cell_size=cell_size)
    if not (occ[0, :].all() and occ[-1, :].all() and occ[:, 0].all() and occ[:, -1].all()):
        raise ValueError("world border is not closed")
    return world


def world_from_ascii(rows: list[str], cell_size: float = DEFAULT_CELL_SIZE) -> GridWorld:
    """Build a world from '#'/'.' rows; handy for test fixtures."""
    height, width = len(rows), len(rows[0])
    occ = np.zeros((height, width), dtype=bool)
    for y, row in enumerate(rows):
        if len(row) != width:
            raise ValueError("ragged ASCII world")
        for x, ch in enumerate(row):
            occ[y, x] = ch == "#"
    return GridWorld(width, height, occ, cell_size=cell_size)
