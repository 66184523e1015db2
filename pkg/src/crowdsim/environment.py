"""Discrete walkable space, spatial markers and floor-field layers.

The lattice is indexed ``(row, col)``. Rows run along the movement axis of
the bundled corridors, so a "torus" grid wraps rows and keeps columns
bounded. Non-wrapping edges act as walls lying just outside the grid.
"""

from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

CELL_SIZE = 0.4
CELL_AREA = CELL_SIZE * CELL_SIZE
SQRT2 = math.sqrt(2.0)

START_AREA = "start_area"
DESTINATION_AREA = "destination_area"
OBSTACLE = "obstacle"
MARKER_KINDS = (START_AREA, DESTINATION_AREA, OBSTACLE)

# (drow, dcol, step cost) for the eight Moore moves
MOORE_STEPS = (
    (-1, 0, 1.0), (-1, 1, SQRT2), (0, 1, 1.0), (1, 1, SQRT2),
    (1, 0, 1.0), (1, -1, SQRT2), (0, -1, 1.0), (-1, -1, SQRT2),
)

Cell = tuple  # (row, col)


class DimensionError(ValueError):
    """Grid dimensions are not positive multiples of the cell size."""


class ConfigurationError(ValueError):
    """Inconsistent markers, groups or scenario parameters."""


@dataclass(frozen=True)
class Marker:
    kind: str
    cells: frozenset
    generation: object = None  # population.GenerationSpec for start areas
    destination_id: str | None = None
    name: str | None = None

    def __post_init__(self):
        if self.kind not in MARKER_KINDS:
            raise ConfigurationError(f"unknown marker kind {self.kind!r}")
        if self.kind == DESTINATION_AREA and self.destination_id is None:
            raise ConfigurationError("destination areas need a destination_id")
        if self.kind == START_AREA and self.generation is None:
            raise ConfigurationError("start areas need a generation spec")
        if self.kind == OBSTACLE and (self.generation is not None or self.destination_id is not None):
            raise ConfigurationError("obstacles carry no generation spec or destination id")

    @classmethod
    def rect(cls, kind: str, row0: int, col0: int, row1: int, col1: int, **kw) -> "Marker":
        """Marker covering the inclusive rectangle ``[row0..row1] x [col0..col1]``."""
        if row1 < row0 or col1 < col0:
            raise ConfigurationError(f"empty marker rectangle ({row0},{col0},{row1},{col1})")
        cells = frozenset((r, c) for r in range(row0, row1 + 1) for c in range(col0, col1 + 1))
        return cls(kind, cells, **kw)


@dataclass
class CellView:
    walkable: bool
    marker: Marker | None
    occupants: list = field(default_factory=list)


@dataclass
class Grid:
    rows: int
    cols: int
    walkable: np.ndarray
    markers: list
    wrap: bool = False
    walls: bool = True
    cell_size: float = CELL_SIZE

    @property
    def shape(self) -> tuple:
        return (self.rows, self.cols)

    @property
    def width_m(self) -> float:
        return self.cols * self.cell_size

    @property
    def height_m(self) -> float:
        return self.rows * self.cell_size

    @property
    def walkable_area(self) -> float:
        return float(self.walkable.sum()) * CELL_AREA

    def in_bounds(self, r: int, c: int) -> bool:
        return 0 <= r < self.rows and 0 <= c < self.cols

    def shift(self, r: int, c: int, dr: int, dc: int):
        """Cell reached from ``(r, c)`` by ``(dr, dc)``, or None off-grid."""
        r2, c2 = r + dr, c + dc
        if self.wrap:
            r2 %= self.rows
        if 0 <= r2 < self.rows and 0 <= c2 < self.cols:
            return (r2, c2)
        return None

    def moore(self, r: int, c: int) -> Iterator[tuple]:
        for dr, dc, cost in MOORE_STEPS:
            nb = self.shift(r, c, dr, dc)
            if nb is not None:
                yield nb, cost

    def marker_at(self, r: int, c: int) -> Marker | None:
        for m in self.markers:
            if (r, c) in m.cells:
                return m
        return None

    def cell(self, r: int, c: int, occupants=()) -> CellView:
        return CellView(bool(self.walkable[r, c]), self.marker_at(r, c), list(occupants))

    def markers_of(self, kind: str) -> list:
        return [m for m in self.markers if m.kind == kind]

    def destination(self, destination_id: str) -> Marker:
        for m in self.markers:
            if m.kind == DESTINATION_AREA and m.destination_id == destination_id:
                return m
        raise ConfigurationError(f"no destination area {destination_id!r}")

    def center(self, r: float, c: float) -> tuple:
        """Metric (x, y) of a cell center; x grows with col, y with row."""
        return ((c + 0.5) * self.cell_size, (r + 0.5) * self.cell_size)


def _cells_along(length: float, what: str) -> int:
    n = length / CELL_SIZE
    k = round(n)
    if length <= 0 or k < 1 or abs(n - k) * CELL_SIZE > 1e-9:
        raise DimensionError(f"{what} {length!r} m is not a positive multiple of {CELL_SIZE} m")
    return k


def build_grid(width: float, height: float, markers: Iterable[Marker] = (), wrap: bool = False,
               walls: bool = True) -> Grid:
    """Lattice of ``height/0.4`` rows by ``width/0.4`` columns."""
    cols = _cells_along(width, "width")
    rows = _cells_along(height, "height")
    markers = list(markers)
    seen: dict = {}
    walkable = np.ones((rows, cols), dtype=bool)
    for i, m in enumerate(markers):
        for r, c in m.cells:
            if not (0 <= r < rows and 0 <= c < cols):
                raise ConfigurationError(f"marker {m.name or i} cell {(r, c)} outside {rows}x{cols} grid")
            if (r, c) in seen:
                raise ConfigurationError(
                    f"markers {markers[seen[(r, c)]].name or seen[(r, c)]} and {m.name or i} overlap at {(r, c)}")
            seen[(r, c)] = i
            if m.kind == OBSTACLE:
                walkable[r, c] = False
    return Grid(rows, cols, walkable, markers, wrap=wrap, walls=walls)


@dataclass
class FieldLayer:
    kind: str
    values: np.ndarray
    destination_id: str | None = None

    def __getitem__(self, rc):
        return self.values[rc]


def compute_path_field(grid: Grid, destination: Marker) -> FieldLayer:
    """Dijkstra distance to ``destination`` with unit/√2 Moore costs.

    Cells that cannot reach the destination hold ``inf``.
    """
    if destination.kind != DESTINATION_AREA:
        raise ConfigurationError("path fields are built for destination areas")
    targets = [rc for rc in destination.cells if grid.walkable[rc]]
    if not targets:
        raise ConfigurationError(f"destination {destination.destination_id!r} has no walkable cells")
    dist = np.full(grid.shape, np.inf)
    heap = []
    for rc in targets:
        dist[rc] = 0.0
        heap.append((0.0, rc))
    heapq.heapify(heap)
    walk = grid.walkable
    while heap:
        d, (r, c) = heapq.heappop(heap)
        if d > dist[r, c]:
            continue
        for nb, cost in grid.moore(r, c):
            if not walk[nb]:
                continue
            nd = d + cost
            if nd < dist[nb]:
                dist[nb] = nd
                heapq.heappush(heap, (nd, nb))
    return FieldLayer("path", dist, destination.destination_id)


def chebyshev_to_obstacles(grid: Grid) -> np.ndarray:
    """Chebyshev distance of each cell to the nearest obstacle or wall cell.

    Walls sit one cell outside every non-wrapping edge when ``grid.walls``.
    """
    dist = np.full(grid.shape, np.inf)
    rr, cc = np.indices(grid.shape)
    if grid.walls:
        wall = np.minimum(cc + 1, grid.cols - cc)
        if not grid.wrap:
            wall = np.minimum(wall, np.minimum(rr + 1, grid.rows - rr))
        dist = wall.astype(float)
    blocked = np.argwhere(~grid.walkable)
    if len(blocked):
        bfs = np.full(grid.shape, np.inf)
        queue = deque()
        for r, c in blocked:
            bfs[r, c] = 0
            queue.append((r, c))
        while queue:
            r, c = queue.popleft()
            for nb, _ in grid.moore(r, c):
                if bfs[nb] == np.inf:
                    bfs[nb] = bfs[r, c] + 1
                    queue.append(nb)
        dist = np.minimum(dist, bfs)
    return dist


def compute_obstacle_field(grid: Grid, radius: int = 2, max_value: float = 1.0) -> FieldLayer:
    """Repulsion peaking next to obstacles/walls, linear decay to 0 past ``radius``."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    if max_value <= 0:
        raise ValueError("max_value must be positive")
    d = chebyshev_to_obstacles(grid)
    with np.errstate(invalid="ignore"):
        vals = max_value * np.clip((radius - d + 1) / radius, 0.0, 1.0)
    vals[np.isinf(d)] = 0.0
    vals[~grid.walkable] = max_value
    return FieldLayer("obstacle", vals)


def _window_sum(a: np.ndarray, radius: int, wrap_rows: bool) -> np.ndarray:
    k = 2 * radius + 1
    rows = a.shape[0]
    if wrap_rows:
        idx = np.arange(-radius, rows + radius) % rows
        p = np.pad(a[idx], ((0, 0), (radius, radius)))
    else:
        p = np.pad(a, radius)
    cs = np.zeros((p.shape[0] + 1, p.shape[1] + 1), dtype=float)
    cs[1:, 1:] = p.cumsum(0).cumsum(1)
    return cs[k:, k:] - cs[:-k, k:] - cs[k:, :-k] + cs[:-k, :-k]


def window_area(grid: Grid, radius: int) -> np.ndarray:
    """Area (m²) of each cell's Chebyshev window clipped to the grid."""
    return _window_sum(np.ones(grid.shape), radius, grid.wrap) * CELL_AREA


def update_density_field(grid: Grid, positions: Iterable[tuple], radius: int = 3,
                         previous: FieldLayer | None = None, alpha: float = 0.0) -> FieldLayer:
    """Pedestrians within Chebyshev ``radius`` per m² of clipped window.

    With ``alpha > 0`` and a ``previous`` layer the result is the moving
    average ``alpha * previous + (1 - alpha) * instantaneous``.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    counts = np.zeros(grid.shape)
    for r, c in positions:
        counts[r, c] += 1
    vals = _window_sum(counts, radius, grid.wrap) / window_area(grid, radius)
    if previous is not None and alpha > 0:
        vals = alpha * previous.values + (1.0 - alpha) * vals
    return FieldLayer("density", vals)
