"""Shuffled sequential simulation loop, arrivals, torus re-entry and runs."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import behavior
from .behavior import MAX_OCCUPANTS, Surroundings
from .environment import (
    DESTINATION_AREA,
    START_AREA,
    FieldLayer,
    Grid,
    compute_obstacle_field,
    compute_path_field,
    update_density_field,
)
from .population import (
    DELTAS,
    EN_BLOC,
    Action,
    Group,
    GroupForest,
    Pedestrian,
    materialize,
    place_unit,
    spawn,
)

log = logging.getLogger(__name__)

STEP_SECONDS = 0.33

RNG_ALGORITHMS = {
    "pcg64": np.random.PCG64,
    "philox": np.random.Philox,
    "sfc64": np.random.SFC64,
    "mt19937": np.random.MT19937,
}


def make_rng(seed: int, algorithm: str = "pcg64") -> np.random.Generator:
    try:
        bitgen = RNG_ALGORITHMS[algorithm]
    except KeyError:
        raise ValueError(f"unknown rng algorithm {algorithm!r}; choose from {sorted(RNG_ALGORITHMS)}")
    return np.random.Generator(bitgen(seed))


class ConsistencyError(RuntimeError):
    """Occupancy bookkeeping diverged from agent positions."""


@dataclass
class Move:
    agent_id: int
    action: Action
    source: tuple
    target: tuple


@dataclass
class StepTrace:
    step: int
    moves: list = field(default_factory=list)
    spawned: list = field(default_factory=list)   # agent ids placed this step
    arrived: list = field(default_factory=list)   # agent ids that reached their destination
    reentered: list = field(default_factory=list)
    exited: list = field(default_factory=list)


@dataclass
class SimulationState:
    grid: Grid
    weights: behavior.UtilityWeights
    delta: float
    path_fields: dict
    obstacle: FieldLayer
    obstacle_max: float
    density: FieldLayer
    rng: np.random.Generator
    torus: bool = True
    density_radius: int = 3
    density_alpha: float = 0.0
    agents: dict = field(default_factory=dict)
    occupants: dict = field(default_factory=dict)
    forest: GroupForest = field(default_factory=GroupForest)
    step: int = 0
    staging: dict = field(default_factory=dict)    # start name -> {unit key: [Pedestrian]}
    pending: dict = field(default_factory=dict)    # start name -> [(size, parent)] deferred spawns
    exited: list = field(default_factory=list)
    spawned_total: int = 0
    ids: itertools.count = field(default_factory=lambda: itertools.count(1))
    group_ids: itertools.count = field(default_factory=lambda: itertools.count(1))
    structured: dict = field(default_factory=dict)  # scenario label -> Group
    destinations: dict = field(default_factory=dict)  # start name -> destination id
    initial_trace: StepTrace | None = None

    @property
    def elapsed(self) -> float:
        return self.step * STEP_SECONDS

    @property
    def positions(self) -> dict:
        return {i: a.position for i, a in self.agents.items()}

    def staged_count(self) -> int:
        return sum(len(v) for units in self.staging.values() for v in units.values())

    def start_marker(self, name):
        for m in self.grid.markers_of(START_AREA):
            if m.name == name:
                return m
        raise KeyError(name)

    def free_cells(self, marker) -> list:
        occ = self.occupants
        return sorted(rc for rc in marker.cells if not occ.get(rc))

    def check(self) -> None:
        seen = {}
        for cell, ids in self.occupants.items():
            if len(ids) > MAX_OCCUPANTS:
                raise ConsistencyError(f"step {self.step}: {len(ids)} occupants in {cell}")
            if ids and not self.grid.walkable[cell]:
                raise ConsistencyError(f"step {self.step}: obstacle {cell} occupied")
            for i in ids:
                seen[i] = cell
        for i, a in self.agents.items():
            if seen.get(i) != a.position:
                raise ConsistencyError(f"step {self.step}: agent {i} at {a.position} but listed in {seen.get(i)}")
        if len(seen) != len(self.agents):
            raise ConsistencyError(f"step {self.step}: ghost occupants")


def _place(state: SimulationState, ped: Pedestrian) -> None:
    state.agents[ped.id] = ped
    state.occupants.setdefault(ped.position, []).append(ped.id)


def _lift(state: SimulationState, ped: Pedestrian) -> None:
    del state.agents[ped.id]
    cell = state.occupants[ped.position]
    cell.remove(ped.id)
    if not cell:
        del state.occupants[ped.position]


def _register(state: SimulationState, pairs, parent_label=None) -> list:
    ids = []
    for ped, group in pairs:
        if group is not None:
            if group.id not in state.forest:
                parent = state.structured.get(parent_label) if parent_label else None
                state.forest.attach(group, parent.id if parent else None)
        elif parent_label:
            state.forest.attach_member(ped.id, state.structured[parent_label].id)
            ped.group_id = state.structured[parent_label].id
        _place(state, ped)
        ids.append(ped.id)
    state.spawned_total += len(ids)
    return ids


def _spawn_pending(state: SimulationState, trace: StepTrace) -> None:
    for marker in state.grid.markers_of(START_AREA):
        queue = state.pending.get(marker.name)
        if not queue:
            continue
        dest = _dest(state, marker)
        still = []
        for size, parent in queue:
            free = state.free_cells(marker)
            cells = place_unit(size, free, state.rng)
            if cells is None:
                still.append((size, parent))
                continue
            pairs = materialize(cells, dest, marker.name, state.ids, state.group_ids)
            trace.spawned.extend(_register(state, pairs, parent))
        state.pending[marker.name] = still


def _default_destination(state: SimulationState) -> str:
    return next(iter(state.path_fields))


def initial_state(grid: Grid, weights, *, seed: int = 0, rng_algorithm: str = "pcg64", delta: float = 2.5,
                  torus: bool = True, obstacle_radius: int = 2, obstacle_max: float = 1.0,
                  density_radius: int = 3, density_alpha: float = 0.0, destinations: dict | None = None,
                  structured: dict | None = None) -> SimulationState:
    """Fields, rng and the step-0 en-bloc population for ``grid``.

    ``destinations`` maps start-area names to destination ids; start areas
    not listed walk to the first destination. ``structured`` maps labels to
    parent labels (or None) for structured groups referenced by batches.
    """
    path_fields = {m.destination_id: compute_path_field(grid, m) for m in grid.markers_of(DESTINATION_AREA)}
    if not path_fields:
        raise ValueError("grid has no destination area")
    obstacle = compute_obstacle_field(grid, obstacle_radius, obstacle_max)
    state = SimulationState(
        grid=grid, weights=weights, delta=delta, path_fields=path_fields, obstacle=obstacle,
        obstacle_max=obstacle_max, density=update_density_field(grid, [], density_radius),
        rng=make_rng(seed, rng_algorithm), torus=torus, density_radius=density_radius,
        density_alpha=density_alpha)
    state.destinations = dict(destinations or {})
    for label in (structured or {}):
        _structured_group(state, label, structured)
    trace = StepTrace(0)
    _spawn_all(state, trace, initial=True)
    state.initial_trace = trace
    return state


def _structured_group(state, label, table) -> Group:
    if label in state.structured:
        return state.structured[label]
    g = Group(next(state.group_ids))
    parent = table.get(label)
    state.structured[label] = g
    if parent is None:
        state.forest.add(g)
    else:
        state.forest.attach(g, _structured_group(state, parent, table).id)
    return g


def _dest(state, marker) -> str:
    return state.destinations.get(marker.name) or _default_destination(state)


def _spawn_all(state: SimulationState, trace: StepTrace, initial: bool = False) -> None:
    for marker in state.grid.markers_of(START_AREA):
        spec = marker.generation
        if (spec.mode == EN_BLOC) != initial:
            continue
        dest = _dest(state, marker)
        if spec.mode == EN_BLOC and spec.batch and any(isinstance(b, tuple) for b in spec.batch):
            # batch entries (size, parent label) for structured compositions
            for entry in spec.batch:
                size, parent = entry if isinstance(entry, tuple) else (entry, None)
                cells = place_unit(size, state.free_cells(marker), state.rng)
                if cells is None:
                    state.pending.setdefault(marker.name, []).append((size, parent))
                    continue
                pairs = materialize(cells, dest, marker.name, state.ids, state.group_ids)
                trace.spawned.extend(_register(state, pairs, parent))
            continue
        placed, deferred = spawn(spec, marker, 0 if initial else max(state.step, 1), state.rng,
                                 state.free_cells(marker), dest, state.ids, state.group_ids)
        trace.spawned.extend(_register(state, placed))
        if deferred:
            log.info("step %d: %d unit(s) deferred at %s", state.step, len(deferred), marker.name)
            state.pending.setdefault(marker.name, []).extend((s, None) for s in deferred)


def fisher_yates(items: list, rng) -> list:
    """Uniform permutation; draws ``len(items) - 1`` uniforms in one call."""
    out = list(items)
    n = len(out)
    if n < 2:
        return out
    u = rng.random(n - 1)
    for k, i in enumerate(range(n - 1, 0, -1)):
        j = int(u[k] * (i + 1))
        out[i], out[j] = out[j], out[i]
    return out


def _move(state: SimulationState, ped: Pedestrian, action: Action) -> Move:
    src = ped.position
    if action == Action.X:
        return Move(ped.id, action, src, src)
    dr, dc = DELTAS[action]
    dst = state.grid.shift(src[0], src[1], dr, dc)
    cell = state.occupants[src]
    cell.remove(ped.id)
    if not cell:
        del state.occupants[src]
    state.occupants.setdefault(dst, []).append(ped.id)
    ped.position = dst
    ped.prev_direction = action
    return Move(ped.id, action, src, dst)


def agent_decision(state: SimulationState, ped: Pedestrian, positions: dict):
    """Effective weights, utilities and action distribution for one agent."""
    weights = behavior.effective_weights(ped, state.weights, state.forest, positions, state.delta)
    env = Surroundings(state.grid, state.path_fields[ped.destination_id].values, state.obstacle.values,
                       state.obstacle_max, state.occupants, positions, state.forest)
    utils = behavior.action_utilities(ped, weights, env)
    return behavior.action_probabilities(utils)


def step(state: SimulationState, check: bool = False, kernel: str = "compiled") -> StepTrace:
    """Advance ``state`` by one step in place and return what happened.

    Stream order per step: ``n - 1`` permutation uniforms, then one action
    uniform per agent in update order, then whatever spawning draws.
    ``kernel="reference"`` runs the pure-Python behaviour functions.
    """
    trace = StepTrace(state.step)
    state.density = update_density_field(state.grid, (a.position for a in state.agents.values()),
                                         state.density_radius, state.density, state.density_alpha)
    ids = sorted(state.agents)
    order = fisher_yates(ids, state.rng)
    if kernel == "reference":
        positions = state.positions
        for pid in order:
            ped = state.agents[pid]
            dist = agent_decision(state, ped, positions)
            action = behavior.choose_action(dist, state.rng)
            mv = _move(state, ped, action)
            positions[pid] = mv.target
            trace.moves.append(mv)
    elif kernel == "compiled":
        _compiled_moves(state, ids, order, trace)
    else:
        raise ValueError(f"unknown kernel {kernel!r}")
    _arrivals(state, trace)
    _spawn_all(state, trace)
    _spawn_pending(state, trace)
    state.step += 1
    if check:
        state.check()
    return trace


def _static_arrays(state: SimulationState) -> dict:
    cached = getattr(state, "_static", None)
    if cached is None:
        dests = list(state.path_fields)
        cached = {
            "dest_index": {d: i for i, d in enumerate(dests)},
            "path": np.ascontiguousarray(np.stack([state.path_fields[d].values for d in dests])),
            "walk": np.ascontiguousarray(state.grid.walkable),
            "obst": np.ascontiguousarray(state.obstacle.values / state.obstacle_max),
            "weights": np.array(state.weights.as_tuple(), dtype=float),
        }
        state._static = cached
    return cached


def _csr(lists) -> tuple:
    ptr = np.zeros(len(lists) + 1, dtype=np.int64)
    for i, l in enumerate(lists):
        ptr[i + 1] = ptr[i] + len(l)
    idx = np.fromiter((x for l in lists for x in l), dtype=np.int64, count=int(ptr[-1]))
    return ptr, idx


def _compiled_moves(state: SimulationState, ids: list, order: list, trace: StepTrace) -> None:
    from . import _kernel

    st = _static_arrays(state)
    n = len(ids)
    uniforms = state.rng.random(n)
    if n == 0:
        return
    slot = {pid: i for i, pid in enumerate(ids)}
    agents = [state.agents[pid] for pid in ids]
    pr = np.fromiter((a.position[0] for a in agents), dtype=np.int64, count=n)
    pc = np.fromiter((a.position[1] for a in agents), dtype=np.int64, count=n)
    prev = np.fromiter((-1 if a.prev_direction is None else int(a.prev_direction) for a in agents),
                       dtype=np.int64, count=n)
    dest = np.fromiter((st["dest_index"][a.destination_id] for a in agents), dtype=np.int64, count=n)

    forest = state.forest
    gindex: dict = {}
    direct = np.full(n, -1, dtype=np.int64)
    root = np.full(n, -1, dtype=np.int64)
    groups = []

    def index_of(g):
        if g.id not in gindex:
            gindex[g.id] = len(groups)
            groups.append(g)
        return gindex[g.id]

    for i, a in enumerate(agents):
        gid = forest.direct.get(a.id)
        if gid is None:
            continue
        g = forest[gid]
        direct[i] = index_of(g)
        top = forest.root_of(gid)
        if top is not g:
            root[i] = index_of(top)
    simple = np.array([g.simple for g in groups], dtype=np.bool_)
    mem_ptr, mem_idx = _csr([[slot[m] for m in g.members if m in slot] for g in groups])
    all_ptr, all_idx = _csr([[slot[m] for m in g.all_members() if m in slot] for g in groups])

    rows, cols = state.grid.shape
    occ_n = np.zeros((rows, cols), dtype=np.int64)
    occ_id = np.full((rows, cols, MAX_OCCUPANTS), -1, dtype=np.int64)
    for cell, occ in state.occupants.items():
        occ_n[cell] = len(occ)
        for j, pid in enumerate(occ):
            occ_id[cell][j] = slot[pid]

    order_slots = np.fromiter((slot[pid] for pid in order), dtype=np.int64, count=n)
    actions = np.empty(n, dtype=np.int64)
    src_r, src_c = pr.copy(), pc.copy()
    _kernel.run_agents(order_slots, uniforms, pr, pc, prev, dest, direct, simple, root, mem_ptr, mem_idx,
                       all_ptr, all_idx, occ_n, occ_id, st["path"], st["walk"], st["obst"], st["weights"],
                       state.delta, state.grid.wrap, actions)
    occupants: dict = {}
    for k, s in enumerate(order_slots):
        a = agents[s]
        act = Action(int(actions[k]))
        src = (int(src_r[s]), int(src_c[s]))
        dst = (int(pr[s]), int(pc[s]))
        if act != Action.X:
            a.prev_direction = act
        a.position = dst
        trace.moves.append(Move(a.id, act, src, dst))
    for a in agents:
        occupants.setdefault(a.position, []).append(a.id)
    state.occupants = occupants


def _arrivals(state: SimulationState, trace: StepTrace) -> None:
    for pid in sorted(state.agents):
        ped = state.agents[pid]
        dest = state.grid.destination(ped.destination_id)
        if ped.position in dest.cells:
            trace.arrived.append(pid)
            handle_arrival(ped, state, trace)
    if state.torus:
        _reenter(state, trace)


def _unit_key(state: SimulationState, ped: Pedestrian):
    gid = state.forest.direct.get(ped.id)
    if gid is not None and state.forest[gid].simple:
        return ("g", gid)
    return ("p", ped.id)


def handle_arrival(ped: Pedestrian, state: SimulationState, trace: StepTrace | None = None) -> None:
    """Torus: stage ``ped`` for re-entry. Open scenario: remove it."""
    _lift(state, ped)
    if state.torus:
        units = state.staging.setdefault(ped.start, {})
        units.setdefault(_unit_key(state, ped), []).append(ped)
    else:
        state.exited.append(ped.id)
        if trace is not None:
            trace.exited.append(ped.id)


def _reenter(state: SimulationState, trace: StepTrace) -> None:
    for start_name in sorted(state.staging, key=str):
        units = state.staging[start_name]
        marker = state.start_marker(start_name)
        for key in sorted(units):
            peds = units[key]
            if key[0] == "g" and len(peds) < len(state.forest[key[1]].members):
                continue
            pref = state.path_fields[peds[0].destination_id].values
            cells = place_unit(len(peds), state.free_cells(marker), state.rng, preference=pref)
            if cells is None:
                continue
            for ped, cell in zip(sorted(peds, key=lambda p: p.id), cells):
                ped.position = cell
                ped.prev_direction = None
                ped.trip += 1
                _place(state, ped)
                trace.reentered.append(ped.id)
            del units[key]


def live_count(state: SimulationState) -> int:
    return len(state.agents)


def mean_speed(traces, dt: float = STEP_SECONDS) -> float:
    dist = 0.0
    n = 0
    for tr in traces:
        for mv in tr.moves:
            n += 1
            if mv.action != Action.X:
                dist += 0.56 if mv.action.diagonal else 0.4
    return dist / (n * dt) if n else math.nan


# --- full runs --------------------------------------------------------------

def _unit_size(state: SimulationState, pid: int) -> int:
    gid = state.forest.direct.get(pid)
    if gid is None:
        return 1
    g = state.forest[gid]
    return len(g.members) if g.simple else 1


def size_label(size: int) -> str:
    return "individuals" if size == 1 else str(size)


@dataclass
class RunResult:
    """What a run measured; ``summary`` is the flat key-value digest."""
    summary: dict
    speeds: dict        # size label -> mean walking speed (m/s) after warm-up
    progress: dict      # size label -> mean speed towards the destination (m/s)
    dispersion: dict    # size label -> [(step, centroid m, area cells/member)]
    trajectory: object = None  # path of the written log, if any


def _dispersion_samples(state: SimulationState, out: dict) -> None:
    from .population import dispersion_area, dispersion_centroid

    for gid, g in state.forest.groups.items():
        if not g.simple or len(g.members) < 2:
            continue
        if any(m not in state.agents for m in g.members):
            continue
        cells = [state.agents[m].position for m in g.members]
        pts = [((c + 0.5) * 0.4, (r + 0.5) * 0.4) for r, c in cells]
        out.setdefault(size_label(len(g.members)), []).append(
            (state.step, dispersion_centroid(pts), dispersion_area(cells)))


def trajectory_header(scenario, state: SimulationState, seed: int, steps: int) -> dict:
    return {
        "scenario": scenario.name, "seed": seed, "rng": scenario.rng, "steps": steps,
        "rows": state.grid.rows, "cols": state.grid.cols, "cell_size": 0.4,
        "frame_interval": STEP_SECONDS, "wrap": str(state.grid.wrap).lower(),
        "torus": str(state.torus).lower(),
    }


def run(scenario, steps: int | None = None, seed: int | None = None, out=None, *, warmup: int | None = None,
        sample_interval: int = 5, kernel: str = "compiled", check: bool = False) -> RunResult:
    """Run ``scenario`` for ``steps`` steps, optionally logging to ``out``.

    Records carry each agent's cell after the step's move; step 0 holds the
    initial placement. Averages skip the first ``warmup`` steps (a third of
    the run by default) so the counterflow can settle.
    """
    from .trajio import TrajectoryWriter

    steps = scenario.steps if steps is None else steps
    seed = scenario.seed if seed is None else seed
    if steps < 1:
        raise ValueError("steps must be >= 1")
    warmup = steps // 3 if warmup is None else warmup
    state = scenario.initial_state(seed)
    writer = TrajectoryWriter(out, trajectory_header(scenario, state, seed, steps)) if out is not None else None
    dist: dict = {}
    gain: dict = {}
    count: dict = {}
    live_sum = 0
    measured = 0
    dispersion: dict = {}
    try:
        if writer:
            for pid in sorted(state.agents):
                a = state.agents[pid]
                writer.write(0, pid, state.forest.direct.get(pid), a.trip, a.position[0], a.position[1], "")
        for _ in range(steps):
            trips = {pid: a.trip for pid, a in state.agents.items()}
            fields = {pid: state.path_fields[a.destination_id].values for pid, a in state.agents.items()}
            trace = step(state, check=check, kernel=kernel)
            t = state.step
            if writer:
                direct = state.forest.direct
                for mv in sorted(trace.moves, key=lambda m: m.agent_id):
                    writer.write(t, mv.agent_id, direct.get(mv.agent_id), trips[mv.agent_id],
                                 mv.target[0], mv.target[1], mv.action.name)
            if t > warmup:
                measured += 1
                live_sum += len(trace.moves)
                for mv in trace.moves:
                    label = size_label(_unit_size(state, mv.agent_id))
                    count[label] = count.get(label, 0) + 1
                    if mv.action != Action.X:
                        dist[label] = dist.get(label, 0.0) + (0.56 if mv.action.diagonal else 0.4)
                        pf = fields[mv.agent_id]
                        gain[label] = gain.get(label, 0.0) + float(pf[mv.source] - pf[mv.target]) * 0.4
            if t % sample_interval == 0:
                _dispersion_samples(state, dispersion)
    finally:
        if writer:
            writer.close()

    speeds = {k: dist.get(k, 0.0) / (count[k] * STEP_SECONDS) for k in sorted(count)}
    progress = {k: gain.get(k, 0.0) / (count[k] * STEP_SECONDS) for k in sorted(count)}
    total = sum(count.values())
    mean_speed_all = sum(dist.values()) / (total * STEP_SECONDS) if total else math.nan
    mean_density = live_sum / measured / scenario.area if measured else math.nan
    summary = {
        "scenario": scenario.name, "seed": seed, "rng": scenario.rng, "steps": steps,
        "simulated_time_s": steps * STEP_SECONDS, "warmup_steps": warmup,
        "population": state.spawned_total, "nominal_density": state.spawned_total / scenario.area,
        "mean_density": mean_density, "mean_speed": mean_speed_all,
        "mean_flow": mean_density * mean_speed_all,
    }
    for label, v in speeds.items():
        summary[f"speed_{label}"] = v
        summary[f"progress_{label}"] = progress[label]
        summary[f"flow_{label}"] = mean_density * progress[label]
    grouped = [k for k in count if k != "individuals"]
    n_grouped = sum(count[k] for k in grouped)
    if n_grouped:
        # all members of any group pooled, weighted by agent-steps
        summary["speed_groups"] = sum(dist.get(k, 0.0) for k in grouped) / (n_grouped * STEP_SECONDS)
        summary["progress_groups"] = sum(gain.get(k, 0.0) for k in grouped) / (n_grouped * STEP_SECONDS)
        summary["flow_groups"] = mean_density * summary["progress_groups"]
    for label, series in sorted(dispersion.items()):
        summary[f"dispersion_area_{label}"] = sum(s[2] for s in series) / len(series)
        summary[f"dispersion_centroid_{label}"] = sum(s[1] for s in series) / len(series)
    return RunResult(summary, speeds, progress, dispersion, out)
