"""Command line: ``crowdsim run | sweep | analyze | presets``.

Exit codes: 0 success, 1 usage, 2 validation, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections import defaultdict
from pathlib import Path

from . import engine, metrics
from .scenario import CORRIDORS, ScenarioError, default_output_dir, load_scenario, preset
from .sweep import critical_density, load_sweep, run_sweep
from .trajio import TrajectoryFormatError, read_trajectory, write_kv, write_table

log = logging.getLogger("crowdsim")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3
METRICS = ("diagram", "los", "speeds", "dispersion", "arrangements", "positions", "flows", "density")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="crowdsim", description="Floor-field pedestrian simulation with groups.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="simulate one scenario")
    r.add_argument("--scenario", required=True, help="scenario YAML file or preset name")
    r.add_argument("--seed", type=int)
    r.add_argument("--steps", type=int)
    r.add_argument("--density", type=float, help="repopulate at this density (ped/m²)")
    r.add_argument("--out", type=Path)

    s = sub.add_parser("sweep", help="density sweep from a sweep YAML file")
    s.add_argument("--scenario", required=True, help="sweep YAML file")
    s.add_argument("--parallel", type=int, default=1)
    s.add_argument("--steps", type=int)
    s.add_argument("--out", type=Path)
    s.add_argument("--no-trajectories", action="store_true")

    a = sub.add_parser("analyze", help="metric tables from a trajectory log")
    a.add_argument("trajectory", type=Path)
    a.add_argument("--metrics", default="diagram,los,speeds",
                   help=f"comma list from {','.join(METRICS)} or 'all'")
    a.add_argument("--cohort-by", choices=("group_size", "group"), default="group_size")
    a.add_argument("--window", type=int, default=180)
    a.add_argument("--section", type=int, help="row index of the counting line (default: middle)")
    a.add_argument("--sample-interval", type=int, default=5)
    a.add_argument("--out", type=Path)

    sub.add_parser("presets", help="list bundled scenarios")
    return p


def _out_dir(arg) -> Path:
    out = Path(arg) if arg else default_output_dir()
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario)
    if args.density is not None:
        sc = sc.with_density(args.density)
    steps = args.steps if args.steps is not None else sc.steps
    if steps < 1:
        raise ScenarioError("--steps must be >= 1")
    out = _out_dir(args.out)
    result = engine.run(sc, steps, args.seed, out / "trajectory.csv")
    write_kv(out / "summary.txt", result.summary)
    print(f"{sc.name}: {steps} steps ({result.summary['simulated_time_s']:.1f} s simulated), "
          f"mean flow {result.summary['mean_flow']:.3f} ped/(m·s) -> {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    spec = load_sweep(args.scenario)
    if args.steps is not None:
        spec.steps = args.steps
    if args.parallel < 1:
        raise UsageError("--parallel must be >= 1")
    out = _out_dir(args.out)
    result = run_sweep(spec, args.parallel, out, trajectories=not args.no_trajectories)
    if result.failed:
        for r in result.failed:
            print(f"run {r.index} failed: {r.error}", file=sys.stderr)
    if not result.succeeded:
        return EXIT_RUNTIME
    crit = critical_density(result.flow_curve())
    write_kv(out / "sweep_summary.txt", {"runs": len(result.runs), "failed": len(result.failed),
                                         "critical_density": crit})
    print(f"{len(result.succeeded)}/{len(result.runs)} runs ok; critical density {crit:g} ped/m² -> {out}")
    return EXIT_OK if not result.failed else EXIT_RUNTIME


def _cohort_key(traj, by: str):
    sizes = traj.group_sizes()
    if by == "group":
        direct = {r.agent_id: r.group_id for r in traj.records}
        return lambda aid: "individual" if direct.get(aid) is None else f"group{direct[aid]}"
    return lambda aid: "individuals" if sizes.get(aid, 1) == 1 else f"size{sizes[aid]}"


def analyze(traj, selected, out: Path, cohort_by="group_size", window=180, section=None,
            sample_interval=5) -> dict:
    """Write one table per selected metric; returns ``{metric: path}``."""
    written = {}
    section = traj.rows // 2 if section is None else section
    width = traj.cols * traj.cell_size

    def emit(name, cols, rows):
        path = out / f"{name}.csv"
        write_table(path, cols, rows)
        written[name] = path

    if "diagram" in selected:
        pts = metrics.fundamental_diagram(traj, section=section, window=window) if traj.records else []
        emit("diagram", ["window_start", "density", "velocity", "flow", "section_flow"],
             [[p.window_start, p.density, p.velocity, p.flow, p.section_flow] for p in pts])
    if "flows" in selected or "los" in selected:
        counts = metrics.count_flows(traj, section, window) if traj.records else []
        if "flows" in selected:
            emit("flows", ["window", "southward", "northward"], [[k, s, n] for k, (s, n) in enumerate(counts)])
        if "los" in selected:
            rows = []
            for k, (s, n) in enumerate(counts):
                f = metrics.flow_per_minute_metre(s + n, width, window, traj.frame_interval)
                rows.append([k, f, metrics.level_of_service(f)])
            if rows:
                avg = sum(r[1] for r in rows) / len(rows)
                rows.append(["mean", avg, metrics.level_of_service(avg)])
            emit("los", ["window", "flow_ped_min_m", "grade"], rows)
    if "density" in selected:
        snaps = metrics.density_snapshots(traj, metrics.full_region(traj), window) if traj.records else []
        emit("density", ["sample", "density"], list(enumerate(snaps)))
    if "speeds" in selected:
        speeds = metrics.track_speeds(traj)
        key = _cohort_key(traj, cohort_by)
        cohorts = defaultdict(list)
        for (aid, _), v in speeds.items():
            cohorts[key(aid)].append(v)
        emit("speeds", ["cohort", "n", "mean_speed"],
             [[c, len(v), sum(v) / len(v)] for c, v in sorted(cohorts.items())])
        emit("speed_tests", ["cohort_a", "cohort_b", "t", "p"],
             [list(row) for row in metrics.pairwise_comparisons(cohorts)])
    if "dispersion" in selected:
        rows = []
        for gid, members in sorted(traj.groups().items()):
            if len(members) < 2:
                continue
            samples, skipped = metrics.dispersion_series(traj, members, sample_interval)
            rows += [[gid, len(members), s.step, s.centroid_m, s.area_cells, s.area_m2] for s in samples]
            if skipped:
                log.info("group %s: %d sample(s) skipped (members missing)", gid, len(skipped))
        emit("dispersion", ["group_id", "size", "step", "centroid_m", "area_cells_per_member", "area_m2"], rows)
    if "arrangements" in selected:
        counts = metrics.arrangement_counts(traj, sample_interval=sample_interval)
        emit("arrangements", ["size", "pattern", "count"],
             [[size, pat, n] for size, pats in sorted(counts.items()) for pat, n in sorted(pats.items())])
    if "positions" in selected:
        emit("positions", ["group_id", "size", "step", "longitudinal_m", "lateral_m"],
             [list(r) for r in metrics.relative_position_map(traj, sample_interval=sample_interval)])
    return written


def cmd_analyze(args) -> int:
    selected = METRICS if args.metrics == "all" else tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    unknown = [m for m in selected if m not in METRICS]
    if unknown:
        raise UsageError(f"unknown metric(s) {', '.join(unknown)}; choose from {', '.join(METRICS)}")
    if not args.trajectory.exists():
        raise ScenarioError(f"trajectory not found: {args.trajectory}")
    traj = read_trajectory(args.trajectory)
    if not traj.records:
        print(f"warning: {args.trajectory} has no records; tables will be empty", file=sys.stderr)
    out = _out_dir(args.out)
    written = analyze(traj, selected, out, args.cohort_by, args.window, args.section, args.sample_interval)
    print(f"wrote {len(written)} table(s) to {out}")
    return EXIT_OK


def cmd_presets(args) -> int:
    for name, (width, length) in CORRIDORS.items():
        g = preset(name).grid()
        print(f"{name}: {width:g} m x {length:g} m, {g.cols} x {g.rows} cells, {width * length:g} m²")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "analyze": cmd_analyze, "presets": cmd_presets}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"crowdsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ScenarioError, TrajectoryFormatError, ValueError) as exc:
        print(f"crowdsim: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:
        print(f"crowdsim: run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
