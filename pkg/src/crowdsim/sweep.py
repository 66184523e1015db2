"""Density sweeps over a scenario template, with deterministic aggregation."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import engine
from .scenario import Scenario, ScenarioError, load_scenario
from .trajio import write_table

log = logging.getLogger(__name__)

SIZE_COLUMNS = ("individuals", "2", "3", "6")


@dataclass
class SweepSpec:
    scenario: Scenario
    densities: list
    repetitions: int = 3
    seed_base: int = 0
    steps: int = 1800
    group_mix: dict | None = None
    size_columns: tuple = SIZE_COLUMNS

    def __post_init__(self):
        self.densities = [float(d) for d in self.densities]
        if not self.densities or any(d <= 0 for d in self.densities):
            raise ScenarioError("sweep densities must be positive")
        if self.densities != sorted(self.densities) or len(set(self.densities)) != len(self.densities):
            raise ScenarioError("sweep densities must be strictly increasing")
        if self.repetitions < 1:
            raise ScenarioError("repetitions must be >= 1")
        if self.steps < 1:
            raise ScenarioError("steps must be >= 1")

    def jobs(self) -> list:
        """``(run index, density, seed)``; seeds count up from ``seed_base``."""
        out = []
        for i, d in enumerate(self.densities):
            for r in range(self.repetitions):
                k = i * self.repetitions + r
                out.append((k, d, self.seed_base + k))
        return out


def load_sweep(source) -> SweepSpec:
    import yaml

    path = Path(source)
    if not path.exists():
        raise ScenarioError(f"sweep file not found: {path}", path=path)
    data = yaml.safe_load(path.read_text()) or {}
    if not isinstance(data, dict) or "scenario" not in data or "densities" not in data:
        raise ScenarioError("sweep needs 'scenario' and 'densities'", path=path)
    ref = data["scenario"]
    if isinstance(ref, str) and not Path(ref).is_absolute() and (path.parent / ref).exists():
        ref = path.parent / ref
    scenario = load_scenario(ref)
    mix = data.get("group_mix")
    return SweepSpec(scenario, list(data["densities"]), int(data.get("repetitions", 3)),
                     int(data.get("seed_base", 0)), int(data.get("steps", scenario.steps)),
                     {int(k): float(v) for k, v in mix.items()} if mix is not None else None)


@dataclass
class RunRecord:
    index: int
    density: float
    seed: int
    result: engine.RunResult | None = None
    error: str | None = None


@dataclass
class SweepResult:
    spec: SweepSpec
    runs: list = field(default_factory=list)

    @property
    def succeeded(self) -> list:
        return [r for r in self.runs if r.result is not None]

    @property
    def failed(self) -> list:
        return [r for r in self.runs if r.result is None]

    def by_density(self) -> dict:
        out = {}
        for r in sorted(self.succeeded, key=lambda r: r.index):
            out.setdefault(r.density, []).append(r.result)
        return out

    def flow_curve(self) -> list:
        """``(density level, mean flow over repetitions)``."""
        return [(d, _mean([r.summary["mean_flow"] for r in res])) for d, res in sorted(self.by_density().items())]

    def critical_density(self) -> float:
        return critical_density(self.flow_curve())

    def dispersion_samples(self, label: str) -> dict:
        """Density level -> pooled area-method samples (cells/member) for one size."""
        return {d: [s[2] for r in res for s in r.dispersion.get(label, ())]
                for d, res in sorted(self.by_density().items())}

    def aggregate_rows(self) -> list:
        rows = []
        for d, res in sorted(self.by_density().items()):
            flows = [r.summary["mean_flow"] for r in res]
            row = [d, len(res), _mean([r.summary["mean_density"] for r in res]),
                   _mean([r.summary["mean_speed"] for r in res]), _mean(flows), min(flows), max(flows)]
            for label in self.spec.size_columns:
                row.append(_mean([r.speeds[label] for r in res if label in r.speeds]))
                row.append(_mean([r.progress[label] * r.summary["mean_density"] for r in res if label in r.progress]))
            rows.append(row)
        return rows

    def aggregate_columns(self) -> list:
        cols = ["density", "runs", "mean_density", "mean_speed", "mean_flow", "flow_min", "flow_max"]
        for label in self.spec.size_columns:
            cols += [f"speed_{label}", f"flow_{label}"]
        return cols

    def dispersion_rows(self) -> list:
        rows = []
        for label in self.spec.size_columns:
            if label == "individuals":
                continue
            for d, res in sorted(self.by_density().items()):
                series = [s for r in res for s in r.dispersion.get(label, ())]
                if not series:
                    continue
                area = [s[2] for s in series]
                rows.append([label, d, len(series), _mean(area), _mean([s[1] for s in series]),
                             sum(a < 6 for a in area) / len(area)])
        return rows

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_table(out / "fundamental_diagram.csv", self.aggregate_columns(), self.aggregate_rows())
        write_table(out / "dispersion.csv", ["group_size", "density", "samples", "area_cells_per_member",
                                             "centroid_m", "share_below_6"], self.dispersion_rows())
        write_table(out / "runs.csv", ["index", "density", "seed", "status", "mean_density", "mean_speed",
                                       "mean_flow", "error"],
                    [[r.index, r.density, r.seed, "ok" if r.result else "failed",
                      r.result.summary["mean_density"] if r.result else None,
                      r.result.summary["mean_speed"] if r.result else None,
                      r.result.summary["mean_flow"] if r.result else None, r.error]
                     for r in sorted(self.runs, key=lambda r: r.index)])


def _mean(xs) -> float:
    xs = list(xs)
    return sum(xs) / len(xs) if xs else math.nan


def critical_density(curve) -> float:
    """Density level with the highest mean flow (earliest on ties)."""
    if not curve:
        raise ValueError("empty flow curve")
    best = max(f for _, f in curve)
    return next(d for d, f in curve if f == best)


def is_unimodal(values, tol: float = 0.1) -> bool:
    """No drop before the peak and no rise after it larger than ``tol`` times the peak."""
    if not values:
        return False
    k = max(range(len(values)), key=lambda i: values[i])
    slack = tol * values[k]
    rising = all(values[i + 1] >= values[i] - slack for i in range(k))
    falling = all(values[i + 1] <= values[i] + slack for i in range(k, len(values) - 1))
    return rising and falling


def _run_one(args):
    scenario, index, density, seed, steps, mix, traj_dir = args
    out = Path(traj_dir) / f"run_{index:04d}_d{density:g}_s{seed}.csv" if traj_dir else None
    try:
        result = engine.run(scenario.with_density(density, mix), steps, seed, out)
        return RunRecord(index, density, seed, result)
    except Exception as exc:  # reported per run; the sweep carries on
        return RunRecord(index, density, seed, error=f"{type(exc).__name__}: {exc}")


def run_sweep(spec: SweepSpec, parallel: int = 1, out_dir=None, trajectories: bool = True) -> SweepResult:
    """One run per (density, repetition); results are folded in run-index order."""
    traj_dir = None
    if out_dir is not None and trajectories:
        traj_dir = Path(out_dir) / "trajectories"
        traj_dir.mkdir(parents=True, exist_ok=True)
    tasks = [(spec.scenario, k, d, s, spec.steps, spec.group_mix, traj_dir) for k, d, s in spec.jobs()]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            records = list(pool.map(_run_one, tasks))
    else:
        records = [_run_one(t) for t in tasks]
    for r in records:
        if r.error:
            log.error("run %d (density %g, seed %d) failed: %s", r.index, r.density, r.seed, r.error)
    result = SweepResult(spec, sorted(records, key=lambda r: r.index))
    if out_dir is not None:
        result.write(out_dir)
    return result
