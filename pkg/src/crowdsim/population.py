"""Pedestrians, the recursive group structure, spawning and group geometry."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Sequence

from .environment import CELL_AREA, ConfigurationError


class Action(IntEnum):
    N = 0
    NE = 1
    E = 2
    SE = 3
    S = 4
    SW = 5
    W = 6
    NW = 7
    X = 8

    @property
    def delta(self) -> tuple:
        return DELTAS[self]

    @property
    def diagonal(self) -> bool:
        return self in (Action.NE, Action.SE, Action.SW, Action.NW)


# N is "up", i.e. decreasing row
DELTAS = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (0, 0))
ACTION_BY_DELTA = {d: Action(i) for i, d in enumerate(DELTAS)}


def heading_difference(a: Action, b: Action) -> int:
    """Number of 45° turns between two moving actions (0..4)."""
    d = abs(int(a) - int(b)) % 8
    return min(d, 8 - d)


class StructureError(ValueError):
    """The group forest is malformed."""


@dataclass(slots=True)
class Pedestrian:
    id: int
    group_id: int | None
    position: tuple
    destination_id: str
    prev_direction: Action | None = None
    start: str | None = None
    trip: int = 0


@dataclass
class Group:
    id: int
    subgroups: list = field(default_factory=list)
    members: list = field(default_factory=list)

    @property
    def kind(self) -> str:
        return "structured" if self.subgroups else "simple"

    @property
    def simple(self) -> bool:
        return not self.subgroups

    def all_members(self) -> list:
        out = list(self.members)
        for g in self.subgroups:
            out.extend(g.all_members())
        return out

    def walk(self):
        yield self
        for g in self.subgroups:
            yield from g.walk()


class GroupForest:
    """Index over a set of root groups: direct-group and root lookups."""

    def __init__(self, roots: Iterable[Group] = ()):
        self.roots: list = []
        self.groups: dict = {}
        self.parent: dict = {}
        self.direct: dict = {}
        for g in roots:
            self.add(g)

    def add(self, root: Group) -> None:
        self._index(root)
        self.roots.append(root)

    def attach(self, group: Group, parent_id: int | None = None) -> None:
        """Register ``group`` as a root or as a new subgroup of ``parent_id``."""
        if parent_id is None:
            self.add(group)
            return
        parent = self.groups[parent_id]
        self._index(group)
        parent.subgroups.append(group)
        self.parent[group.id] = parent_id

    def attach_member(self, pid: int, gid: int) -> None:
        if pid in self.direct:
            raise StructureError(f"pedestrian {pid} already in group {self.direct[pid]}")
        self.groups[gid].members.append(pid)
        self.direct[pid] = gid

    def _index(self, root: Group) -> None:
        for g in root.walk():
            if g.id in self.groups:
                raise StructureError(f"group {g.id} appears twice in the forest")
            self.groups[g.id] = g
            for sub in g.subgroups:
                self.parent[sub.id] = g.id
            for pid in g.members:
                if pid in self.direct:
                    raise StructureError(f"pedestrian {pid} listed in groups {self.direct[pid]} and {g.id}")
                self.direct[pid] = g.id

    def __contains__(self, gid) -> bool:
        return gid in self.groups

    def __getitem__(self, gid) -> Group:
        return self.groups[gid]

    def root_of(self, gid: int) -> Group:
        seen = set()
        while gid in self.parent:
            if gid in seen:
                raise StructureError(f"cycle through group {gid}")
            seen.add(gid)
            gid = self.parent[gid]
        return self.groups[gid]


def resolve_groups(agent: Pedestrian, forest: GroupForest):
    """``(direct, largest)`` groups containing ``agent``; ``(None, None)`` for individuals."""
    gid = forest.direct.get(agent.id)
    if gid is None:
        return None, None
    if agent.group_id is not None and agent.group_id != gid:
        raise StructureError(f"pedestrian {agent.id} claims group {agent.group_id} but is listed in {gid}")
    return forest[gid], forest.root_of(gid)


# --- geometry ---------------------------------------------------------------

def group_centroid(points: Sequence) -> tuple:
    if not points:
        raise ValueError("centroid of an empty group")
    n = len(points)
    return (sum(p[0] for p in points) / n, sum(p[1] for p in points) / n)


def dispersion_centroid(points: Sequence) -> float:
    """Mean Euclidean distance of members from their centroid (same units as input)."""
    cx, cy = group_centroid(points)
    return sum(math.hypot(p[0] - cx, p[1] - cy) for p in points) / len(points)


def _cross(o, a, b) -> int:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: Iterable[tuple]) -> list:
    """Monotone chain hull, counter-clockwise, collinear points dropped."""
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def hull_cell_count(cells: Iterable[tuple]) -> int:
    """Lattice cells whose centers lie inside or on the hull of ``cells``.

    Uses Pick's theorem on integer cell indices, so it is exact.
    """
    hull = convex_hull(cells)
    if not hull:
        raise ValueError("hull of an empty set")
    if len(hull) == 1:
        return 1
    if len(hull) == 2:
        (r0, c0), (r1, c1) = hull
        return math.gcd(abs(r1 - r0), abs(c1 - c0)) + 1
    twice_area = 0
    boundary = 0
    for i, (r0, c0) in enumerate(hull):
        r1, c1 = hull[(i + 1) % len(hull)]
        twice_area += r0 * c1 - r1 * c0
        boundary += math.gcd(abs(r1 - r0), abs(c1 - c0))
    twice_area = abs(twice_area)
    interior = (twice_area - boundary + 2) // 2
    return interior + boundary


def dispersion_area(cells: Sequence) -> float:
    """Hull footprint in cells divided by member count (cells/member)."""
    if not cells:
        raise ValueError("dispersion of an empty group")
    return hull_cell_count(cells) / len(cells)


def area_to_m2(cells_per_member: float) -> float:
    return cells_per_member * CELL_AREA


# --- generation -------------------------------------------------------------

FREQUENCY = "frequency_based"
EN_BLOC = "en_bloc"


@dataclass(frozen=True)
class GenerationSpec:
    """How a start area produces pedestrians.

    ``group_mix`` maps group size to the share of *pedestrians* travelling
    in groups of that size; the remainder walks alone.
    """
    mode: str = EN_BLOC
    rate: float = 0.0
    count: int = 0
    batch: tuple = ()      # unit sizes or (size, parent label) pairs
    group_mix: tuple = ()  # ((size, share), ...), hashable

    def __post_init__(self):
        if self.mode not in (FREQUENCY, EN_BLOC):
            raise ConfigurationError(f"unknown generation mode {self.mode!r}")
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigurationError("frequency rate is a per-step arrival probability in [0, 1]")
        if self.count < 0:
            raise ConfigurationError("count must be non-negative")
        mix = dict(self.group_mix)
        if any(s < 2 for s in mix) or any(v < 0 for v in mix.values()):
            raise ConfigurationError("group_mix sizes must be >= 2 with non-negative shares")
        if sum(mix.values()) > 1.0 + 1e-9:
            raise ConfigurationError("group_mix shares sum above 1")
        # batch entries are unit sizes, or (size, structured parent label) pairs
        if any((b[0] if isinstance(b, tuple) else b) < 1 for b in self.batch):
            raise ConfigurationError("batch unit sizes must be >= 1")

    @property
    def mix(self) -> dict:
        return dict(self.group_mix)


def compose_units(n: int, group_mix: dict) -> list:
    """Deterministic split of ``n`` pedestrians into unit sizes per ``group_mix``.

    Larger groups are allotted first; whatever is left walks alone.
    """
    units = []
    left = n
    for size in sorted(group_mix, reverse=True):
        k = min(int(round(n * group_mix[size] / size)), left // size)
        units.extend([size] * k)
        left -= k * size
    units.extend([1] * left)
    return units


def sample_unit_size(group_mix: dict, rng) -> int:
    """Random unit size whose member shares follow ``group_mix`` on average."""
    weights = {1: max(0.0, 1.0 - sum(group_mix.values()))}
    for s, p in group_mix.items():
        weights[s] = p / s
    sizes = sorted(weights)
    total = sum(weights.values())
    u = rng.random() * total
    acc = 0.0
    for s in sizes:
        acc += weights[s]
        if u < acc:
            return s
    return sizes[-1]


def place_unit(size: int, free: Sequence, rng, preference=None, reach: int = 2):
    """Pick ``size`` mutually close cells among ``free`` cells, or None.

    The first cell is drawn uniformly; with a ``preference`` mapping only
    cells within 0.5 of the best preference value are eligible. The rest
    are the nearest free cells within Chebyshev ``reach`` of the first.
    """
    if len(free) < size:
        return None
    cands = list(free)
    if preference is not None:
        best = max(preference[rc] for rc in cands)
        cands = [rc for rc in cands if preference[rc] >= best - 0.5]
    lead = cands[int(rng.random() * len(cands))]
    if size == 1:
        return [lead]
    r0, c0 = lead
    near = []
    for rc in free:
        if rc == lead:
            continue
        dr, dc = abs(rc[0] - r0), abs(rc[1] - c0)
        if max(dr, dc) <= reach:
            pref = -preference[rc] if preference is not None else 0.0
            near.append((max(dr, dc), pref, dr * dr + dc * dc, rc))
    if len(near) < size - 1:
        return None
    near.sort()
    return [lead] + [t[3] for t in near[: size - 1]]


def spawn(spec: GenerationSpec, start, step: int, rng, free: Sequence, destination_id: str,
          new_ids, new_group_ids, preference=None):
    """Generate pedestrians at a start area for one step.

    Returns ``(placed, deferred)``: ``placed`` is a list of
    ``(Pedestrian, Group | None)`` pairs and ``deferred`` lists unit sizes
    that found no room and should be retried next step.
    """
    if spec.mode == EN_BLOC:
        if step != 0:
            return [], []
        units = list(spec.batch) if spec.batch else compose_units(spec.count, spec.mix)
    else:
        units = []
        if spec.rate > 0 and rng.random() < spec.rate:
            units.append(sample_unit_size(spec.mix, rng))
    free = list(free)
    placed, deferred = [], []
    for size in units:
        cells = place_unit(size, free, rng, preference)
        if cells is None:
            deferred.append(size)
            continue
        taken = set(cells)
        free = [rc for rc in free if rc not in taken]
        placed.extend(materialize(cells, destination_id, getattr(start, "name", None), new_ids, new_group_ids))
    return placed, deferred


def materialize(cells, destination_id, start_name, new_ids, new_group_ids):
    if len(cells) == 1:
        return [(Pedestrian(next(new_ids), None, cells[0], destination_id, start=start_name), None)]
    gid = next(new_group_ids)
    peds = [Pedestrian(next(new_ids), gid, rc, destination_id, start=start_name) for rc in cells]
    group = Group(gid, [], [p.id for p in peds])
    return [(p, group) for p in peds]
