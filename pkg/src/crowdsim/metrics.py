"""Measurements over trajectory logs, simulated or observed.

Cells map to metric points at their centres: ``x = (col + 0.5) * 0.4`` and
``y = (row + 0.5) * 0.4``; "south" is increasing row.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from itertools import combinations
from typing import Sequence

from scipy import stats

from .environment import CELL_AREA, CELL_SIZE
from .population import dispersion_area, dispersion_centroid, group_centroid
from .trajio import Trajectory

STEP_SECONDS = 0.33
STRAIGHT_STEP = 0.4
DIAGONAL_STEP = 0.56
HALF_CELL = 0.2
OBSERVATION_FRAME_INTERVAL = 1.79


class DataError(ValueError):
    """Trajectory data violates a metric's preconditions."""


# --- paths and speeds -------------------------------------------------------

def _step_delta(a, b, rows: int = 0, wrap: bool = False) -> tuple:
    dr, dc = b.row - a.row, b.col - a.col
    if wrap and rows:
        dr = (dr + rows // 2) % rows - rows // 2
    return dr, dc


def path_length(track: Sequence, observation: bool = False, rows: int = 0, wrap: bool = False) -> float:
    """Length in metres of a step-sorted track.

    Straight steps count 0.4 m, diagonal steps 0.56 m, standing 0.
    ``observation=True`` adds the 0.2 m half-cell lead-in and lead-out used
    when coding field footage.
    """
    total = 0.0
    for a, b in zip(track, track[1:]):
        if b.step <= a.step:
            raise DataError(f"track not sorted by step at step {b.step}")
        dr, dc = _step_delta(a, b, rows, wrap)
        if max(abs(dr), abs(dc)) > 1:
            raise DataError(f"non-adjacent jump at step {b.step}: ({a.row},{a.col}) -> ({b.row},{b.col})")
        if dr and dc:
            total += DIAGONAL_STEP
        elif dr or dc:
            total += STRAIGHT_STEP
    if observation and len(track) >= 2:
        total += 2 * HALF_CELL
    return total


def walking_speed(track: Sequence, frame_interval: float = STEP_SECONDS, **kw) -> float:
    """Path length over elapsed time (m/s)."""
    if len(track) < 2:
        raise DataError("walking speed needs at least two records")
    elapsed = (track[-1].step - track[0].step) * frame_interval
    if elapsed <= 0:
        raise DataError("zero elapsed time")
    return path_length(track, **kw) / elapsed


def track_speeds(traj: Trajectory, min_records: int = 2) -> dict:
    """``(agent_id, trip) -> walking speed`` for every track long enough."""
    out = {}
    for key, tr in traj.tracks().items():
        if len(tr) >= min_records and tr[-1].step > tr[0].step:
            out[key] = walking_speed(tr, traj.frame_interval, rows=traj.rows, wrap=traj.wrap)
    return out


# --- regions, densities and flows ------------------------------------------

def region_area(region: tuple) -> float:
    r0, c0, r1, c1 = region
    return (r1 - r0 + 1) * (c1 - c0 + 1) * CELL_AREA


def _in_region(rec, region) -> bool:
    r0, c0, r1, c1 = region
    return r0 <= rec.row <= r1 and c0 <= rec.col <= c1


def full_region(traj: Trajectory) -> tuple:
    return (0, 0, traj.rows - 1, traj.cols - 1)


def density_snapshots(traj: Trajectory, region: tuple, sample_interval: int = 180, steps=None) -> list:
    """Agents in ``region`` per m² at every ``sample_interval``-th step."""
    if sample_interval < 1:
        raise ValueError("sample_interval must be >= 1")
    by_step = traj.by_step()
    all_steps = steps if steps is not None else traj.steps()
    if not all_steps:
        return []
    area = region_area(region)
    first, last = all_steps[0], all_steps[-1]
    return [sum(1 for r in by_step.get(s, ()) if _in_region(r, region)) / area
            for s in range(first, last + 1, sample_interval)]


def _crossings(traj: Trajectory, section: int):
    """Yield ``(step, +1 southward | -1 northward)`` for each crossing of row boundary ``section``."""
    for tr in traj.tracks().values():
        for a, b in zip(tr, tr[1:]):
            dr, _ = _step_delta(a, b, traj.rows, traj.wrap)
            if dr > 0 and a.row < section <= a.row + dr:
                yield b.step, 1
            elif dr < 0 and a.row + dr < section <= a.row:
                yield b.step, -1


def count_flows(traj: Trajectory, section: int, window: int = 180) -> list:
    """Per-window ``(southward, northward)`` crossing counts of the line above row ``section``."""
    steps = traj.steps()
    if not steps:
        return []
    first = steps[0]
    nwin = (steps[-1] - first) // window + 1
    counts = [[0, 0] for _ in range(nwin)]
    for s, direction in _crossings(traj, section):
        k = (s - first) // window
        counts[k][0 if direction > 0 else 1] += 1
    return [tuple(c) for c in counts]


def specific_flow(crossings: int, width_m: float, seconds: float) -> float:
    """Pedestrians per metre of width per second."""
    return crossings / (width_m * seconds)


@dataclass(frozen=True)
class FundamentalDiagramPoint:
    density: float
    velocity: float
    flow: float
    section_flow: float | None = None
    window_start: int = 0


def fundamental_diagram(traj: Trajectory, region: tuple | None = None, section: int | None = None,
                        window: int = 180) -> list:
    """Density, mean walking speed and their product per time window.

    ``section_flow`` counts crossings of ``section`` per metre and second.
    Windows without agents in the region are omitted.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    region = region or full_region(traj)
    area = region_area(region)
    width = (region[3] - region[1] + 1) * traj.cell_size
    steps = traj.steps()
    if not steps:
        return []
    by_step = traj.by_step()
    tracks = traj.tracks()
    cross = defaultdict(int)
    if section is not None:
        for s, _ in _crossings(traj, section):
            cross[(s - steps[0]) // window] += 1
    points = []
    for k, w0 in enumerate(range(steps[0], steps[-1] + 1, window)):
        w1 = w0 + window
        counts = [sum(1 for r in by_step.get(s, ()) if _in_region(r, region)) for s in range(w0, min(w1, steps[-1] + 1))]
        if not counts or sum(counts) == 0:
            continue
        density = sum(counts) / len(counts) / area
        speeds = []
        for tr in tracks.values():
            seg = [r for r in tr if w0 <= r.step < w1]
            if len(seg) >= 2 and any(_in_region(r, region) for r in seg):
                speeds.append(walking_speed(seg, traj.frame_interval, rows=traj.rows, wrap=traj.wrap))
        if not speeds:
            continue
        velocity = sum(speeds) / len(speeds)
        sf = None
        if section is not None:
            sf = specific_flow(cross[k], width, len(counts) * traj.frame_interval)
        points.append(FundamentalDiagramPoint(density, velocity, density * velocity, sf, w0))
    return points


# --- level of service -------------------------------------------------------

@dataclass(frozen=True)
class LOSTable:
    """Ordered ``(grade, upper flow bound in ped/min/m)``; the last bound is ``inf``."""
    bands: tuple

    def __post_init__(self):
        bounds = [b for _, b in self.bands]
        if any(b1 <= b0 for b0, b1 in zip(bounds, bounds[1:])):
            raise ValueError("LOS bounds must be strictly increasing")
        if bounds[-1] != math.inf:
            raise ValueError("the final LOS grade must be unbounded")


# Placeholder walkway thresholds (platoon-adjusted ped/min/ft scaled to metres);
# swap in the authoritative table when available.
DEFAULT_LOS = LOSTable((("A", 1.64), ("B", 9.84), ("C", 19.7), ("D", 36.1), ("E", 59.1), ("F", math.inf)))


def level_of_service(flow: float, table: LOSTable = DEFAULT_LOS) -> str:
    if flow < 0:
        raise ValueError("flow must be non-negative")
    for grade, bound in table.bands:
        if flow < bound:
            return grade
    return table.bands[-1][0]


def flow_per_minute_metre(crossings: int, width_m: float, window_steps: int, frame_interval: float) -> float:
    return crossings / width_m / (window_steps * frame_interval / 60.0)


# --- group dispersion and arrangement --------------------------------------

def cell_point(rec, cell_size: float = CELL_SIZE) -> tuple:
    return ((rec.col + 0.5) * cell_size, (rec.row + 0.5) * cell_size)


@dataclass(frozen=True)
class DispersionSample:
    step: int
    centroid_m: float
    area_cells: float  # hull cells per member

    @property
    def area_m2(self) -> float:
        return self.area_cells * CELL_AREA

    def hull_m2(self, size: int) -> float:
        return self.area_cells * size * CELL_AREA


def dispersion_series(traj: Trajectory, members: Sequence, sample_interval: int = 5):
    """Both dispersion measures for one group at every sampled step.

    Returns ``(samples, skipped_steps)``; a step is skipped when a member
    has no record there.
    """
    by_step = traj.by_step()
    steps = traj.steps()
    want = set(members)
    samples, skipped = [], []
    if not steps:
        return samples, skipped
    for s in range(steps[0], steps[-1] + 1, sample_interval):
        recs = [r for r in by_step.get(s, ()) if r.agent_id in want]
        if len(recs) != len(want):
            skipped.append(s)
            continue
        pts = [cell_point(r, traj.cell_size) for r in recs]
        cells = [(r.row, r.col) for r in recs]
        samples.append(DispersionSample(s, dispersion_centroid(pts), dispersion_area(cells)))
    return samples, skipped


LINE_ABREAST = "line_abreast"
RIVER_LIKE = "river_like"
V_LIKE = "v_like"
RHOMBUS = "rhombus"
SPLIT_DYADS = "split_dyads"
DISPERSED = "dispersed"


def relative_frame(points: Sequence, heading: tuple) -> list:
    """``(longitudinal, lateral)`` offsets from the centroid along/across ``heading``."""
    hx, hy = heading
    norm = math.hypot(hx, hy)
    if norm == 0:
        raise ValueError("heading must be non-zero")
    hx, hy = hx / norm, hy / norm
    cx, cy = group_centroid(points)
    return [((x - cx) * hx + (y - cy) * hy, (x - cx) * -hy + (y - cy) * hx) for x, y in points]


def classify_arrangement(points: Sequence, heading: tuple, tol: float = 0.25) -> str:
    """Walking formation of 2-5 members relative to the movement direction."""
    rel = relative_frame(points, heading)
    lon = [p[0] for p in rel]
    lat = [p[1] for p in rel]
    lon_spread = max(lon) - min(lon)
    lat_spread = max(lat) - min(lat)
    if lon_spread <= tol and lat_spread > tol:
        return LINE_ABREAST
    if lat_spread <= tol and lon_spread > tol:
        return RIVER_LIKE
    n = len(rel)
    if n in (3, 4):
        by_lat = sorted(rel, key=lambda p: p[1])
        left, right, middle = by_lat[0], by_lat[-1], by_lat[1:-1]
        # middle members must sit clearly between the flanks, so ties on a flank never form a wedge
        between = all(m[1] - left[1] > tol and right[1] - m[1] > tol for m in middle)
        if between and abs(left[0] - right[0]) <= tol:
            level = (left[0] + right[0]) / 2
            offs = [m[0] - level for m in middle]
            if all(o > tol for o in offs) or all(o < -tol for o in offs):
                return V_LIKE
    if n == 4:
        by_lon = sorted(rel, key=lambda p: -p[0])
        lead, a, b, trail = by_lon
        if (abs(a[0] - b[0]) <= tol and abs(a[1] - b[1]) > tol
                and lead[0] - max(a[0], b[0]) > tol and min(a[0], b[0]) - trail[0] > tol):
            return RHOMBUS
        for i, j in ((0, 1), (0, 2), (0, 3)):
            p = [rel[i], rel[j]]
            q = [rel[k] for k in range(4) if k not in (i, j)]
            gp = math.dist(*p)
            gq = math.dist(*q)
            inter = math.dist(group_centroid(p), group_centroid(q))
            if max(gp, gq) / 2 < inter / 2:
                return SPLIT_DYADS
    return DISPERSED


def group_headings(traj: Trajectory, members: Sequence, sample_interval: int):
    """Yield ``(step, member points, unit heading)`` where the centroid moved."""
    by_step = traj.by_step()
    steps = traj.steps()
    want = set(members)
    prev = None
    if not steps:
        return
    for s in range(steps[0], steps[-1] + 1, sample_interval):
        recs = sorted((r for r in by_step.get(s, ()) if r.agent_id in want), key=lambda r: r.agent_id)
        if len(recs) != len(want):
            prev = None
            continue
        pts = [cell_point(r, traj.cell_size) for r in recs]
        c = group_centroid(pts)
        if prev is not None:
            hx, hy = c[0] - prev[0], c[1] - prev[1]
            norm = math.hypot(hx, hy)
            if norm > 1e-12:
                yield s, pts, (hx / norm, hy / norm)
        prev = c


def relative_position_map(traj: Trajectory, groups: dict | None = None, sample_interval: int = 5) -> list:
    """``(group_id, size, step, longitudinal m, lateral m)`` per member and usable sample."""
    groups = groups if groups is not None else traj.groups()
    out = []
    for gid, members in sorted(groups.items()):
        for s, pts, h in group_headings(traj, members, sample_interval):
            for lon, lat in relative_frame(pts, h):
                out.append((gid, len(members), s, lon, lat))
    return out


def arrangement_counts(traj: Trajectory, groups: dict | None = None, sample_interval: int = 5,
                       tol: float = 0.25) -> dict:
    """``size -> {pattern: count}`` over all usable samples."""
    groups = groups if groups is not None else traj.groups()
    out: dict = defaultdict(lambda: defaultdict(int))
    for gid, members in groups.items():
        if not 2 <= len(members) <= 5:
            continue
        for _, pts, h in group_headings(traj, members, sample_interval):
            out[len(members)][classify_arrangement(pts, h, tol)] += 1
    return {k: dict(v) for k, v in out.items()}


# --- statistics -------------------------------------------------------------

def compare_means(a: Sequence, b: Sequence) -> tuple:
    """Welch's unequal-variance t statistic and two-tailed p-value."""
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise ValueError("each sample needs at least two values")
    ma, mb = sum(a) / na, sum(b) / nb
    va = sum((x - ma) ** 2 for x in a) / (na - 1)
    vb = sum((x - mb) ** 2 for x in b) / (nb - 1)
    if va == 0 and vb == 0:
        raise ValueError("both samples have zero variance")
    sa, sb = va / na, vb / nb
    se = math.sqrt(sa + sb)
    t = (ma - mb) / se
    df = (sa + sb) ** 2 / ((sa ** 2 / (na - 1) if na > 1 else 0) + (sb ** 2 / (nb - 1) if nb > 1 else 0))
    p = 2.0 * stats.t.sf(abs(t), df)
    return t, min(1.0, p)


def pairwise_comparisons(cohorts: dict) -> list:
    """``(cohort_a, cohort_b, t, p)`` for every pair with enough data."""
    out = []
    for ka, kb in combinations(sorted(cohorts), 2):
        try:
            t, p = compare_means(cohorts[ka], cohorts[kb])
        except ValueError:
            continue
        out.append((ka, kb, t, p))
    return out
