"""Density sweeps over the three benchmark corridors.

Writes one fundamental-diagram and dispersion table per corridor and prints
the critical density of each, e.g.

    python3 scripts/fundamental_diagram.py --seeds 3 --out out/fd
"""

import argparse
from pathlib import Path

from crowdsim.scenario import CORRIDORS, preset
from crowdsim.sweep import SweepSpec, is_unimodal, run_sweep


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--corridors", nargs="+", default=sorted(CORRIDORS))
    p.add_argument("--densities", type=float, nargs="+", default=[0.25 * k for k in range(1, 11)])
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--steps", type=int, default=1800)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--out", type=Path, default=Path("out/fundamental_diagram"))
    args = p.parse_args()

    for name in args.corridors:
        spec = SweepSpec(preset(name), args.densities, args.seeds, steps=args.steps)
        res = run_sweep(spec, args.parallel, args.out / name, trajectories=False)
        flows = [f for _, f in res.flow_curve()]
        print(f"{name}: critical density {res.critical_density():g} ped/m², unimodal={is_unimodal(flows)}")
        for d, f in res.flow_curve():
            print(f"  {d:5.2f}  {f:.3f}")


if __name__ == "__main__":
    main()
