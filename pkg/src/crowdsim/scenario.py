"""Scenario definitions: bundled corridor presets and YAML scenario files."""

from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .behavior import CALIBRATED_WEIGHTS, DEFAULT_DELTA, UtilityWeights
from .engine import RNG_ALGORITHMS, SimulationState, initial_state
from .environment import (
    CELL_AREA,
    DESTINATION_AREA,
    MARKER_KINDS,
    OBSTACLE,
    START_AREA,
    ConfigurationError,
    DimensionError,
    Marker,
    build_grid,
)
from .population import EN_BLOC, GenerationSpec, compose_units

OBSERVED_GROUP_MIX = {2: 0.28, 3: 0.24, 6: 0.12}

CORRIDORS = {
    "corridor_A": (2.4, 20.0),
    "corridor_B": (3.6, 13.2),
    "corridor_C": (4.8, 10.0),
}


class ScenarioError(ValueError):
    """Scenario file failed to parse or validate; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, path=None):
        where = f"{path}:" if path else ""
        where += f"{line}: " if line else (" " if path else "")
        super().__init__(f"{where}{message}")
        self.line = line
        self.path = path


@dataclass
class Scenario:
    name: str
    width: float
    height: float
    markers: list
    wrap: bool = False
    walls: bool = True
    torus: bool = True
    destinations: dict = field(default_factory=dict)
    structured: dict = field(default_factory=dict)
    weights: UtilityWeights = field(default_factory=UtilityWeights)
    delta: float = DEFAULT_DELTA
    obstacle_radius: int = 2
    obstacle_max: float = 1.0
    density_radius: int = 3
    density_alpha: float = 0.0
    steps: int = 1800
    seed: int = 0
    rng: str = "pcg64"

    @property
    def area(self) -> float:
        return self.width * self.height

    def population(self) -> int:
        return sum(_unit_total(m.generation) for m in self.markers if m.kind == START_AREA)

    @property
    def nominal_density(self) -> float:
        return self.population() / self.area

    def grid(self):
        return build_grid(self.width, self.height, self.markers, wrap=self.wrap, walls=self.walls)

    def initial_state(self, seed: int | None = None) -> SimulationState:
        return initial_state(
            self.grid(), self.weights, seed=self.seed if seed is None else seed, rng_algorithm=self.rng,
            delta=self.delta, torus=self.torus, obstacle_radius=self.obstacle_radius,
            obstacle_max=self.obstacle_max, density_radius=self.density_radius,
            density_alpha=self.density_alpha, destinations=self.destinations, structured=self.structured)

    def with_density(self, density: float, group_mix: dict | None = None) -> "Scenario":
        """Copy populated en bloc at ``density`` ped/m², split evenly over start areas.

        Units are composed on the whole population and dealt round-robin,
        largest first, so every flow gets a similar mix.
        """
        mix = OBSERVED_GROUP_MIX if group_mix is None else group_mix
        n = int(round(density * self.area))
        starts = [m for m in self.markers if m.kind == START_AREA]
        if not starts:
            raise ConfigurationError("scenario has no start area")
        units = sorted(compose_units(n, mix), reverse=True)
        batches = [[] for _ in starts]
        for k, size in enumerate(units):
            batches[k % len(starts)].append(size)
        markers = []
        for m in self.markers:
            if m.kind == START_AREA:
                spec = GenerationSpec(EN_BLOC, batch=tuple(batches[starts.index(m)]),
                                      group_mix=tuple(sorted(mix.items())))
                m = replace(m, generation=spec)
            markers.append(m)
        return replace(self, markers=markers)


def _unit_total(spec: GenerationSpec) -> int:
    if spec.mode != EN_BLOC:
        return 0
    if spec.batch:
        return sum(b[0] if isinstance(b, tuple) else b for b in spec.batch)
    return spec.count


def corridor(name: str, width: float, length: float, density: float = 0.5,
             group_mix: dict | None = None, **kw) -> Scenario:
    """Bidirectional counterflow corridor running along the rows.

    The southbound flow starts in the upper half and exits through the last
    row; the northbound flow mirrors it. Arrivals re-enter at their start.
    """
    cols = int(round(width / 0.4))
    rows = int(round(length / 0.4))
    half = rows // 2
    empty = GenerationSpec(EN_BLOC)
    markers = [
        Marker.rect(DESTINATION_AREA, rows - 1, 0, rows - 1, cols - 1, destination_id="south_exit",
                    name="south_exit"),
        Marker.rect(DESTINATION_AREA, 0, 0, 0, cols - 1, destination_id="north_exit", name="north_exit"),
        Marker.rect(START_AREA, 1, 0, half - 1, cols - 1, generation=empty, name="southbound"),
        Marker.rect(START_AREA, half, 0, rows - 2, cols - 1, generation=empty, name="northbound"),
    ]
    kw.setdefault("weights", CALIBRATED_WEIGHTS)
    sc = Scenario(name, width, length, markers, torus=True,
                  destinations={"southbound": "south_exit", "northbound": "north_exit"}, **kw)
    return sc.with_density(density, group_mix)


def preset(name: str, density: float = 0.5, group_mix: dict | None = None, **kw) -> Scenario:
    try:
        width, length = CORRIDORS[name]
    except KeyError:
        raise ScenarioError(f"unknown preset {name!r}; available: {', '.join(CORRIDORS)}")
    return corridor(name, width, length, density, group_mix, **kw)


# --- YAML scenario files ----------------------------------------------------

TOP_KEYS = {"name", "preset", "grid", "torus", "markers", "weights", "delta", "fields", "population",
            "structured_groups", "steps", "seed", "rng"}


def _lines(node) -> dict:
    """Map top-level keys (and nested mapping keys, dotted) to 1-based line numbers."""
    out = {}

    def walk(n, prefix):
        if isinstance(n, yaml.MappingNode):
            for k, v in n.value:
                key = f"{prefix}{k.value}"
                out[key] = k.start_mark.line + 1
                walk(v, key + ".")
        elif isinstance(n, yaml.SequenceNode):
            for i, v in enumerate(n.value):
                out[f"{prefix}{i}"] = v.start_mark.line + 1
                walk(v, f"{prefix}{i}.")

    if node is not None:
        walk(node, "")
    return out


def load_scenario(source) -> Scenario:
    """Load a preset by name or a YAML scenario file."""
    if isinstance(source, str) and source in CORRIDORS:
        return preset(source)
    path = Path(source)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}", path=path)
    text = path.read_text()
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(f"parse error: {getattr(exc, 'problem', exc)}",
                            mark.line + 1 if mark else None, path) from exc
    return scenario_from_dict(data, _lines(node), path)


def scenario_from_dict(data: dict, lines: dict | None = None, path=None) -> Scenario:
    lines = lines or {}

    def fail(msg, key=None):
        raise ScenarioError(msg, lines.get(key) if key else None, path)

    if not isinstance(data, dict):
        fail("scenario must be a mapping")
    unknown = set(data) - TOP_KEYS
    if unknown:
        k = sorted(unknown)[0]
        fail(f"unknown key {k!r}", k)

    fields_cfg = data.get("fields", {}) or {}
    kw = {}
    for key, cast in (("obstacle_radius", int), ("obstacle_max", float), ("density_radius", int),
                      ("density_alpha", float)):
        if key in fields_cfg:
            kw[key] = cast(fields_cfg[key])
    if kw.get("obstacle_radius", 2) < 1 or kw.get("density_radius", 3) < 1:
        fail("field radii must be >= 1", "fields")
    if not 0.0 <= kw.get("density_alpha", 0.0) < 1.0:
        fail("density_alpha must be in [0, 1)", "fields.density_alpha")
    if "weights" in data:
        w = data["weights"] or {}
        for k, v in w.items():
            if k not in UtilityWeights.__dataclass_fields__:
                fail(f"unknown weight {k!r}", f"weights.{k}")
            if not isinstance(v, (int, float)) or not 0 <= v <= 100:
                fail(f"weight {k}={v} outside [0, 100]", f"weights.{k}")
        # partial tables override the base weights of the preset or the class defaults
        kw["weights"] = replace(CALIBRATED_WEIGHTS if "preset" in data else UtilityWeights(),
                                **{k: float(v) for k, v in w.items()})
    if "delta" in data:
        if not isinstance(data["delta"], (int, float)) or data["delta"] <= 0:
            fail("delta must be positive", "delta")
        kw["delta"] = float(data["delta"])
    if "steps" in data:
        if not isinstance(data["steps"], int) or data["steps"] < 1:
            fail("steps must be an integer >= 1", "steps")
        kw["steps"] = data["steps"]
    if "seed" in data:
        kw["seed"] = int(data["seed"])
    if "rng" in data:
        if data["rng"] not in RNG_ALGORITHMS:
            fail(f"unknown rng {data['rng']!r}", "rng")
        kw["rng"] = data["rng"]

    pop = data.get("population") or {}
    mix = {int(k): float(v) for k, v in (pop.get("group_mix") or OBSERVED_GROUP_MIX).items()}
    if sum(mix.values()) > 1 + 1e-9:
        fail("group_mix shares sum above 1", "population.group_mix")

    if "preset" in data:
        if data["preset"] not in CORRIDORS:
            fail(f"unknown preset {data['preset']!r}", "preset")
        sc = preset(data["preset"], float(pop.get("density", 0.5)), mix, **kw)
        if "name" in data:
            sc = replace(sc, name=str(data["name"]))
        return sc

    grid = data.get("grid")
    if not isinstance(grid, dict):
        fail("missing grid section", "grid")
    try:
        width, height = float(grid["width"]), float(grid["height"])
    except (KeyError, TypeError, ValueError):
        fail("grid needs numeric width and height", "grid")
    markers, destinations, structured = [], {}, {}
    for label in data.get("structured_groups") or []:
        structured[label["id"]] = label.get("parent")
    for i, m in enumerate(data.get("markers") or []):
        key = f"markers.{i}"
        kind = m.get("kind")
        if kind not in MARKER_KINDS:
            fail(f"marker kind must be one of {MARKER_KINDS}", key)
        rect = m.get("rect")
        if not (isinstance(rect, list) and len(rect) == 4):
            fail("marker rect must be [row0, col0, row1, col1]", key)
        extra = {"name": m.get("name", f"{kind}{i}")}
        if kind == DESTINATION_AREA:
            extra["destination_id"] = m.get("destination_id", extra["name"])
        elif kind == START_AREA:
            gen = m.get("generation") or {}
            try:
                extra["generation"] = _generation(gen, mix, structured)
            except (ConfigurationError, TypeError, ValueError) as exc:
                fail(str(exc), key)
            if "destination" in m:
                destinations[extra["name"]] = m["destination"]
        try:
            markers.append(Marker.rect(kind, *rect, **extra))
        except ConfigurationError as exc:
            fail(str(exc), key)
    sc = Scenario(str(data.get("name", "scenario")), width, height, markers,
                  wrap=bool(grid.get("wrap", False)), walls=bool(grid.get("walls", True)),
                  torus=bool(data.get("torus", True)), destinations=destinations, structured=structured, **kw)
    try:
        g = sc.grid()
    except (ConfigurationError, DimensionError) as exc:
        fail(str(exc), "grid")
    dest_ids = {m.destination_id for m in g.markers_of(DESTINATION_AREA)}
    if not dest_ids:
        fail("scenario needs at least one destination_area", "markers")
    for start, dest in destinations.items():
        if dest not in dest_ids:
            fail(f"start area {start!r} references unknown destination {dest!r}", "markers")
    if "density" in pop:
        sc = sc.with_density(float(pop["density"]), mix)
    return sc


def _generation(gen: dict, mix: dict, structured: dict) -> GenerationSpec:
    mode = gen.get("mode", EN_BLOC)
    batch = []
    for row in gen.get("groups") or []:
        size, count = int(row.get("size", 1)), int(row.get("count", 1))
        parent = row.get("parent")
        if parent is not None and parent not in structured:
            raise ConfigurationError(f"group row references unknown structured group {parent!r}")
        batch.extend([(size, parent)] * count)
    local_mix = gen.get("group_mix")
    local_mix = {int(k): float(v) for k, v in local_mix.items()} if local_mix else mix
    return GenerationSpec(mode, rate=float(gen.get("rate", 0.0)), count=int(gen.get("count", 0)),
                          batch=tuple(batch), group_mix=tuple(sorted(local_mix.items())))


def scenario_to_dict(sc: Scenario) -> dict:
    """Plain-data dump of a scenario (markers as cell lists are not round-tripped)."""
    return {
        "name": sc.name, "grid": {"width": sc.width, "height": sc.height, "wrap": sc.wrap, "walls": sc.walls},
        "torus": sc.torus, "weights": dict(zip(UtilityWeights.__dataclass_fields__, sc.weights.as_tuple())),
        "delta": sc.delta, "steps": sc.steps, "seed": sc.seed, "rng": sc.rng,
        "population": sc.population(), "area_m2": sc.area,
    }


def default_output_dir() -> Path:
    return Path(os.environ.get("CROWDSIM_OUT", "out"))
